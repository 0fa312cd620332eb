#pragma once

// Deterministic SVG scatter plots. Every coordinate goes through fmt_fixed,
// so identical inputs give identical bytes.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "format.hpp"

namespace uadlab::svg {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double x_err = 0.0;  // half-widths of the error bars; 0 draws none
  double y_err = 0.0;
  std::string label;
};

struct Series {
  std::string name;
  std::vector<Point> points;
};

struct ScatterPlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<std::string> notes;  // free text rendered under the title
};

inline constexpr int kWidth = 640;
inline constexpr int kHeight = 480;
inline constexpr int kLeft = 80, kRight = 170, kTop = 56, kBottom = 60;

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo = 0.0, hi = 1.0, step = 0.2;
};

// 1-2-5 tick spacing covering [lo, hi] with roughly `target` intervals.
inline Axis nice_axis(double lo, double hi, int target = 5) {
  if (!(std::isfinite(lo) && std::isfinite(hi))) return {};
  if (hi < lo) std::swap(lo, hi);
  if (hi - lo < 1e-300) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  const double step = (frac <= 1.0 ? 1.0 : frac <= 2.0 ? 2.0 : frac <= 5.0 ? 5.0 : 10.0) * mag;
  return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

inline int tick_digits(double step) {
  const int d = -static_cast<int>(std::floor(std::log10(step)));
  return std::clamp(d, 0, 12);
}

inline std::string render(const ScatterPlot& plot) {
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(plot.title)
     << "</text>\n";
  for (std::size_t i = 0; i < plot.notes.size(); ++i) {
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << 38 + 13 * static_cast<int>(i)
       << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#444\">" << escape(plot.notes[i]) << "</text>\n";
  }

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  std::size_t n_points = 0;
  for (const auto& s : plot.series) {
    for (const auto& p : s.points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
      const double xe = std::isfinite(p.x_err) ? p.x_err : 0.0;
      const double ye = std::isfinite(p.y_err) ? p.y_err : 0.0;
      xmin = std::min(xmin, p.x - xe);
      xmax = std::max(xmax, p.x + xe);
      ymin = std::min(ymin, p.y - ye);
      ymax = std::max(ymax, p.y + ye);
      ++n_points;
    }
  }
  const Axis ax = n_points ? nice_axis(xmin, xmax) : Axis{};
  const Axis ay = n_points ? nice_axis(ymin, ymax) : Axis{};
  auto sx = [&](double v) { return fmt_fixed(kLeft + (v - ax.lo) / (ax.hi - ax.lo) * pw, 2); };
  auto sy = [&](double v) { return fmt_fixed(kTop + ph - (v - ay.lo) / (ay.hi - ay.lo) * ph, 2); };

  // Frame, ticks, grid.
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << fmt_fixed(pw, 0) << "\" height=\""
     << fmt_fixed(ph, 0) << "\" fill=\"none\" stroke=\"black\"/>\n";
  const int xd = tick_digits(ax.step), yd = tick_digits(ay.step);
  const int nx = static_cast<int>(std::lround((ax.hi - ax.lo) / ax.step));
  const int ny = static_cast<int>(std::lround((ay.hi - ay.lo) / ay.step));
  for (int i = 0; i <= nx; ++i) {
    const double v = ax.lo + i * ax.step;
    os << "<line x1=\"" << sx(v) << "\" y1=\"" << kTop << "\" x2=\"" << sx(v) << "\" y2=\"" << kTop + ph
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << sx(v) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << fmt_fixed(v, xd)
       << "</text>\n";
  }
  for (int i = 0; i <= ny; ++i) {
    const double v = ay.lo + i * ay.step;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << sy(v) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << sy(v)
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << sy(v) << "\" text-anchor=\"end\" dominant-baseline=\"middle\">"
       << fmt_fixed(v, yd) << "</text>\n";
  }
  os << "<text x=\"" << fmt_fixed(kLeft + pw / 2, 1) << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\">"
     << escape(plot.x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << fmt_fixed(kTop + ph / 2, 1) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << fmt_fixed(kTop + ph / 2, 1) << ")\">" << escape(plot.y_label) << "</text>\n";

  if (n_points == 0) {
    os << "<text x=\"" << fmt_fixed(kLeft + pw / 2, 1) << "\" y=\"" << fmt_fixed(kTop + ph / 2, 1)
       << "\" text-anchor=\"middle\" font-size=\"16\" fill=\"#888\">no data</text>\n";
  }

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const std::string& color = palette()[k % palette().size()];
    os << "<g fill=\"" << color << "\" stroke=\"" << color << "\">\n";
    for (const auto& p : s.points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
      if (p.x_err > 0.0 && std::isfinite(p.x_err)) {
        os << "<line x1=\"" << sx(p.x - p.x_err) << "\" y1=\"" << sy(p.y) << "\" x2=\"" << sx(p.x + p.x_err)
           << "\" y2=\"" << sy(p.y) << "\"/>\n";
      }
      if (p.y_err > 0.0 && std::isfinite(p.y_err)) {
        os << "<line x1=\"" << sx(p.x) << "\" y1=\"" << sy(p.y - p.y_err) << "\" x2=\"" << sx(p.x) << "\" y2=\""
           << sy(p.y + p.y_err) << "\"/>\n";
      }
      os << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"4\">";
      if (!p.label.empty()) os << "<title>" << escape(p.label) << "</title>";
      os << "</circle>\n";
      if (!p.label.empty()) {
        os << "<text x=\"" << sx(p.x) << "\" y=\"" << sy(p.y) << "\" dx=\"6\" dy=\"-6\" font-size=\"10\" stroke=\"none\">"
           << escape(p.label) << "</text>\n";
      }
    }
    os << "</g>\n";
    // Legend entry.
    const int ly = kTop + 10 + 18 * static_cast<int>(k);
    os << "<circle cx=\"" << kWidth - kRight + 16 << "\" cy=\"" << ly << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight + 26 << "\" y=\"" << ly << "\" dominant-baseline=\"middle\">"
       << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace uadlab::svg
