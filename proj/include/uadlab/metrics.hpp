#pragma once

// Anomaly maps and evaluation metrics: residual statistics, MSE family, SSIM,
// voxel-level AP / best-Dice, sample-level scores and AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "phantom.hpp"
#include "tensor.hpp"

namespace uadlab::eval {

inline constexpr double kSigmaFloor = 1e-6;

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

}  // namespace detail

inline Tensor residual(const Tensor& x, const Tensor& x_hat) {
  detail::require_same_shape(x, x_hat, "residual");
  Tensor r(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - x_hat[i];
  return r;
}

struct ResidualStats {
  Tensor mu;
  Tensor sigma;
  std::size_t n_images = 0;
};

// Per-voxel mean and population std over healthy validation residuals.
inline ResidualStats fit_residual_stats(std::span<const Tensor> residuals) {
  if (residuals.size() < 2) throw DomainError("fit_residual_stats needs at least 2 residual images");
  const Tensor& first = residuals.front();
  for (const auto& r : residuals) detail::require_same_shape(first, r, "fit_residual_stats");
  const double n = static_cast<double>(residuals.size());
  ResidualStats st{Tensor(first.shape()), Tensor(first.shape()), residuals.size()};
  for (std::size_t i = 0; i < first.size(); ++i) {
    double s = 0.0;
    for (const auto& r : residuals) s += r[i];
    const double m = s / n;
    double ss = 0.0;
    for (const auto& r : residuals) ss += (r[i] - m) * (r[i] - m);
    st.mu[i] = m;
    st.sigma[i] = std::max(kSigmaFloor, std::sqrt(ss / n));
  }
  return st;
}

// r~ = (r - mu_HC) / sigma_HC.
inline Tensor normalize_residual(const Tensor& r, const ResidualStats& st) {
  detail::require_same_shape(r, st.mu, "normalize_residual");
  Tensor out(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = (r[i] - st.mu[i]) / st.sigma[i];
  return out;
}

inline double mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline double hh_mse(const Tensor& x, const Tensor& x_hat) { return mse(x, x_hat); }

// Reconstruction of the abnormal input against its paired healthy image.
inline double ah_mse(const Tensor& x_hat_prime, const Tensor& x) { return mse(x_hat_prime, x); }

inline double rmse_ratio(double ah, double hh) {
  if (!(hh > 0.0)) throw DomainError("rMSE undefined: hhMSE is zero (degenerate perfect reconstruction)");
  return ah / hh;
}

inline constexpr std::size_t kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Mean SSIM over all fully contained 7x7 windows (uniform weights, sample
// covariance, data range 1).
inline double ssim(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "ssim");
  if (a.rank() != 2) throw ShapeError("ssim expects a 2-D image");
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = kSsimWindow;
  if (rows < w || cols < w) throw ShapeError("ssim: image smaller than the 7x7 window");
  const double np = static_cast<double>(w * w);
  const double cov_norm = np / (np - 1.0);
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r0 = 0; r0 + w <= rows; ++r0) {
    for (std::size_t c0 = 0; c0 + w <= cols; ++c0) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t r = r0; r < r0 + w; ++r) {
        for (std::size_t c = c0; c < c0 + w; ++c) {
          const double x = a.at(r, c), y = b.at(r, c);
          sx += x;
          sy += y;
          sxx += x * x;
          syy += y * y;
          sxy += x * y;
        }
      }
      const double ux = sx / np, uy = sy / np;
      const double vx = cov_norm * (sxx / np - ux * ux);
      const double vy = cov_norm * (syy / np - uy * uy);
      const double vxy = cov_norm * (sxy / np - ux * uy);
      total += ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

namespace detail {

inline std::size_t count_positives(std::span<const double> labels) {
  std::size_t p = 0;
  for (double l : labels) p += l > 0.5;
  return p;
}

// Indices sorted by descending score; within a tie negatives come first
// (pessimistic for positives).
inline std::vector<std::size_t> pessimistic_order(std::span<const double> scores, std::span<const double> labels) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return (labels[i] > 0.5) < (labels[j] > 0.5);
  });
  return idx;
}

inline void check_scores(std::span<const double> scores, std::span<const double> labels, const char* what) {
  if (scores.size() != labels.size()) throw ShapeError(std::string(what) + ": scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw DomainError(std::string(what) + ": NaN score");
  }
}

}  // namespace detail

inline double average_precision(std::span<const double> scores, std::span<const double> labels) {
  detail::check_scores(scores, labels, "average_precision");
  const std::size_t pos = detail::count_positives(labels);
  if (pos == 0) throw DomainError("average_precision needs at least one positive label");
  const auto order = detail::pessimistic_order(scores, labels);
  double acc = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] > 0.5) {
      ++tp;
      acc += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return acc / static_cast<double>(pos);
}

// Max Dice over thresholds at every observed score (prediction: score >= t).
inline double best_dice(std::span<const double> scores, std::span<const double> labels) {
  detail::check_scores(scores, labels, "best_dice");
  const std::size_t pos = detail::count_positives(labels);
  if (pos == 0) throw DomainError("best_dice needs at least one positive label");
  const auto order = detail::pessimistic_order(scores, labels);
  std::size_t tp = 0, fp = 0;
  double best = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (labels[order[k]] > 0.5 ? tp : fp) += 1;
    const bool group_end = k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]];
    if (!group_end) continue;
    const std::size_t fn = pos - tp;
    best = std::max(best, 2.0 * tp / static_cast<double>(2 * tp + fp + fn));
  }
  return best;
}

// Mean |r~| over all voxels.
inline double sample_score(const Tensor& anomaly_map) {
  double s = 0.0;
  for (double v : anomaly_map.storage()) s += std::abs(v);
  return s / static_cast<double>(anomaly_map.size());
}

// Mann-Whitney statistic: P(pos > neg) + 1/2 P(pos == neg).
inline double auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw DomainError("auc needs nonempty positive and negative sets");
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(neg.begin(), neg.end());
  std::uint64_t twice = 0;
  for (double p : positives) {
    if (std::isnan(p)) throw DomainError("auc: NaN score");
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    twice += 2 * static_cast<std::uint64_t>(lo - neg.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

// ---------------------------------------------------------------------------
// Model evaluation

// Maps one image to its reconstruction (same shape).
using Reconstructor = std::function<Tensor(const Tensor&)>;

struct SetMetrics {
  std::string name;
  double severity = 0.0;
  double ah_mse = 0.0;
  double rmse = 0.0;
  double ap = std::numeric_limits<double>::quiet_NaN();
  double dice = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sample_scores;
};

struct MetricsRecord {
  std::string model_id;
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  double hh_mse = 0.0;
  double ssim = 0.0;
  std::vector<SetMetrics> sets;
  double auc = std::numeric_limits<double>::quiet_NaN();

  const SetMetrics* find_set(const std::string& name) const {
    for (const auto& s : sets) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

inline ResidualStats fit_stats(const Reconstructor& model, std::span<const phantom::ImageRecord* const> healthy_val) {
  std::vector<Tensor> res;
  res.reserve(healthy_val.size());
  for (const auto* rec : healthy_val) res.push_back(residual(rec->image, model(rec->image)));
  return fit_residual_stats(res);
}

// Pairs carrying no anomaly (zero severity) contribute to ahMSE but not to
// AP / Dice (their masks are empty) nor to the abnormal sample scores.
inline SetMetrics evaluate_simulated_set(const Reconstructor& model, const phantom::SimulatedSet& set,
                                         const ResidualStats& stats, double hh) {
  if (set.pairs.empty()) throw DataError("simulated set " + set.name + " is empty");
  SetMetrics m;
  m.name = set.name;
  m.severity = set.severity;
  double ah = 0.0, ap = 0.0, dice = 0.0;
  std::size_t scored = 0;
  for (const auto& p : set.pairs) {
    if (p.x.size() == 0 || p.x.shape() != p.x_prime.shape()) {
      throw DataError("simulated pair " + p.id + " lacks its paired healthy ground truth");
    }
    const Tensor rec = model(p.x_prime);
    ah += ah_mse(rec, p.x);
    const Tensor amap = normalize_residual(residual(p.x_prime, rec), stats);
    if (p.degenerate || detail::count_positives(p.mask.storage()) == 0) continue;
    m.sample_scores.push_back(sample_score(amap));
    std::vector<double> scores(amap.size());
    for (std::size_t i = 0; i < amap.size(); ++i) scores[i] = std::abs(amap[i]);
    ap += average_precision(scores, p.mask.storage());
    dice += best_dice(scores, p.mask.storage());
    ++scored;
  }
  m.ah_mse = ah / static_cast<double>(set.pairs.size());
  m.rmse = rmse_ratio(m.ah_mse, hh);
  if (scored > 0) {
    m.ap = ap / static_cast<double>(scored);
    m.dice = dice / static_cast<double>(scored);
  }
  return m;
}

// Full protocol: stats from the model's own healthy validation residuals,
// hhMSE/SSIM on test-CN, per-set metrics, and a pooled sample-level AUC
// (all simulated sets vs test-CN).
inline MetricsRecord evaluate_model(const Reconstructor& model, const phantom::StandardDatasets& data,
                                    std::span<const phantom::ImageRecord* const> healthy_val) {
  const ResidualStats stats = fit_stats(model, healthy_val);
  MetricsRecord rec;
  std::vector<double> negatives;
  double hh = 0.0, ss = 0.0;
  for (const auto& img : data.test_cn) {
    const Tensor x_hat = model(img.image);
    hh += hh_mse(img.image, x_hat);
    ss += ssim(img.image, x_hat);
    negatives.push_back(sample_score(normalize_residual(residual(img.image, x_hat), stats)));
  }
  if (data.test_cn.empty()) throw DataError("dataset has no test-CN images");
  rec.hh_mse = hh / static_cast<double>(data.test_cn.size());
  rec.ssim = ss / static_cast<double>(data.test_cn.size());
  std::vector<double> positives;
  for (const auto& set : data.simulated) {
    rec.sets.push_back(evaluate_simulated_set(model, set, stats, rec.hh_mse));
    positives.insert(positives.end(), rec.sets.back().sample_scores.begin(), rec.sets.back().sample_scores.end());
  }
  if (!positives.empty()) rec.auc = auc(positives, negatives);
  return rec;
}

}  // namespace uadlab::eval
