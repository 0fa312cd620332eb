#pragma once

// Latent-space geometry: Gaussian summaries of posterior means, the Bures
// 2-Wasserstein distance, its train/val-normalized form, and correlations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "phantom.hpp"
#include "tensor.hpp"
#include "vae.hpp"

namespace uadlab::latent {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct GaussianSummary {
  Vector mean;
  Matrix cov;
  std::size_t n = 0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

// One row of posterior means per image.
inline Matrix collect_latents(const vae::ModelParams& params, std::span<const Tensor* const> images) {
  const std::size_t d = params.arch.latent_dim;
  Matrix codes(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(d));
  if (images.empty()) return codes;
  const Tensor x = stack_rows(images);
  const Tensor mu = vae::encode(x, params).mu;
  for (std::size_t r = 0; r < images.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) codes(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = mu.at(r, c);
  }
  return codes;
}

inline Matrix collect_latents(const vae::ModelParams& params, std::span<const phantom::ImageRecord* const> images) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(images.size());
  for (const auto* rec : images) ptrs.push_back(&rec->image);
  return collect_latents(params, std::span<const Tensor* const>(ptrs));
}

namespace detail {

inline void check_symmetric(const Matrix& m, double tol, const char* what) {
  if (m.rows() != m.cols()) throw ShapeError(std::string(what) + ": matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw DomainError(std::string(what) + ": matrix is not symmetric");
  }
}

inline Matrix clamp_psd(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Sample mean and unbiased covariance, symmetrized, negative eigenvalues
// clamped. With `diagonal` set, off-diagonal covariance entries are zeroed.
inline GaussianSummary fit_gaussian(const Matrix& codes, bool diagonal = false) {
  if (codes.rows() < 2) throw DomainError("fit_gaussian needs at least 2 codes");
  GaussianSummary g;
  g.n = static_cast<std::size_t>(codes.rows());
  g.mean = codes.colwise().mean().transpose();
  const Matrix centered = codes.rowwise() - g.mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(codes.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
  if (diagonal) {
    g.cov = Matrix(cov.diagonal().asDiagonal());
  } else {
    g.cov = detail::clamp_psd(cov);
    g.cov = 0.5 * (g.cov + g.cov.transpose());
  }
  return g;
}

inline Matrix sqrtm_psd(const Matrix& m) {
  detail::check_symmetric(m, 1e-9, "sqrtm_psd");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-10 * std::max(1.0, std::abs(ev.maxCoeff()))) {
    throw DomainError("sqrtm_psd: matrix has a negative eigenvalue");
  }
  // Eigenvalues at round-off level are treated as exact zeros; otherwise their
  // square roots (about 1e-8) would leak into W2 for rank-deficient inputs.
  const double tol = ev.size() > 0 ? 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0) : 0.0;
  const Vector root = ev.unaryExpr([tol](double v) { return v <= tol ? 0.0 : std::sqrt(v); });
  Matrix out = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// Bures form: W2^2 = |m1 - m2|^2 + Tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2).
// The trace term equals min over orthogonal U of |S1^1/2 - S2^1/2 U|_F^2
// (orthogonal Procrustes), which is evaluated as a norm of a difference so
// identical inputs give 0 instead of sqrt(round-off).
inline double w2_gaussian(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dim() != b.dim() || a.cov.rows() != b.cov.rows()) {
    throw ShapeError("w2_gaussian: dimensions " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()) +
                     " differ");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Matrix ra = sqrtm_psd(a.cov);
  const Matrix rb = sqrtm_psd(b.cov);
  Eigen::JacobiSVD<Matrix> svd(rb * ra, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix u = svd.matrixU() * svd.matrixV().transpose();
  const double cov_term = (ra - rb * u).squaredNorm();
  return std::sqrt(mean_term + cov_term);
}

inline constexpr double kW2DenominatorFloor = 1e-12;

struct NormalizedW2 {
  double ratio = 0.0;
  double numerator = 0.0;    // W2(test-AD, test-CN)
  double denominator = 0.0;  // W2(train, val), floored
  bool degenerate = false;   // denominator hit the floor
};

inline NormalizedW2 normalized_w2(const Matrix& test_ad, const Matrix& test_cn, const Matrix& train,
                                  const Matrix& val, bool diagonal = false) {
  for (const Matrix* m : {&test_ad, &test_cn, &train, &val}) {
    if (m->rows() < 2) throw DomainError("normalized_w2 needs at least 2 codes in every set");
  }
  NormalizedW2 out;
  out.numerator = w2_gaussian(fit_gaussian(test_ad, diagonal), fit_gaussian(test_cn, diagonal));
  const double den = w2_gaussian(fit_gaussian(train, diagonal), fit_gaussian(val, diagonal));
  out.degenerate = !(den > kW2DenominatorFloor);
  out.denominator = std::max(den, kW2DenominatorFloor);
  out.ratio = out.numerator / out.denominator;
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson: sequences differ in length");
  if (xs.size() < 3) throw DomainError("pearson needs at least 3 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DomainError("pearson: zero variance in input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Average ranks (1-based); ties share the mean of their positions.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  return pearson(rx, ry);
}

}  // namespace uadlab::latent
