#pragma once

// Numerical checks shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "test_support.hpp"
#include "uadlab/gradcheck.hpp"
#include "uadlab/latent.hpp"
#include "uadlab/phantom.hpp"
#include "uadlab/training.hpp"
#include "uadlab/vae.hpp"

namespace uadlab::testkit {

// Worst relative error of the full ELBO gradient (all parameters) for one
// random (params, batch, noise) triple drawn from `seed`.
inline double full_loss_grad_error(const vae::ArchConfig& arch, const std::vector<const Tensor*>& images,
                                   std::uint64_t seed, double beta, double h = 1e-5,
                                   bool tensor_scaled = true) {
  RandomStream rng = SeededRng(seed).stream("gradcheck");
  vae::ModelParams params = training::init_params(arch, rng);
  if (arch.posterior == vae::PosteriorKind::sparse) {
    for (double& v : params.get("log_alpha").data()) v = rng.uniform(-4.0, 1.0);
  }
  const std::size_t batch = 2;
  std::vector<const Tensor*> picked;
  for (std::size_t i = 0; i < batch; ++i) picked.push_back(images[rng.below(images.size())]);
  const Tensor x = stack_rows(picked);
  Tensor noise(Shape{batch, arch.latent_dim});
  rng.fill_normal(noise.data());
  const diff::LossFn fn = [&](diff::Tape& tape, std::span<const diff::Var> vars) {
    vae::ModelVars mv{&params.arch, std::vector<diff::Var>(vars.begin(), vars.end())};
    return vae::model_loss(tape.constant(x), tape.constant(noise), mv, beta).total;
  };
  return diff::grad_check(fn, params.tensors, h, tensor_scaled);
}

// Relative error between the closed-form diagonal KL and a Monte-Carlo
// estimate E_q[log q(z) - log p(z)] with `samples` draws.
inline double kl_monte_carlo_error(const Tensor& mu, const Tensor& log_var, std::size_t samples,
                                   RandomStream& rng) {
  diff::Tape tape;
  vae::Posterior post;
  post.mu = tape.constant(mu.reshaped({1, mu.size()}));
  post.log_var = tape.constant(log_var.reshaped({1, mu.size()}));
  const double closed = vae::kl_diag_gaussian(post).value().item();
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double sigma = std::exp(0.5 * log_var[i]);
      const double eps = rng.normal();
      const double z = mu[i] + sigma * eps;
      // log q - log p, constants cancel.
      log_ratio += -0.5 * eps * eps - 0.5 * log_var[i] + 0.5 * z * z;
    }
    acc += log_ratio;
  }
  const double mc = acc / static_cast<double>(samples);
  return std::abs(mc - closed) / std::abs(closed);
}

// ---------------------------------------------------------------------------
// Brute-force ranking metrics

struct Instance {
  std::vector<double> scores;
  std::vector<double> labels;
};

// Scores drawn from a handful of levels when `ties` is set, so most
// instances contain tied positives and negatives.
inline Instance random_instance(RandomStream& rng, bool ties) {
  Instance in;
  const std::size_t n = 1 + rng.below(64);
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(ties ? static_cast<double>(rng.below(4)) : rng.uniform());
    in.labels.push_back(rng.below(3) == 0 ? 1.0 : 0.0);
  }
  if (std::find(in.labels.begin(), in.labels.end(), 1.0) == in.labels.end()) in.labels[rng.below(n)] = 1.0;
  return in;
}

// Precision at each positive's pessimistic rank, counted directly.
inline double brute_ap(const Instance& in) {
  double sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < in.scores.size(); ++i) {
    if (in.labels[i] < 0.5) continue;
    ++pos;
    std::size_t above_neg = 0, above_pos = 0, tied_pos_before = 0;
    for (std::size_t j = 0; j < in.scores.size(); ++j) {
      if (in.labels[j] < 0.5) {
        above_neg += in.scores[j] >= in.scores[i];
      } else {
        above_pos += in.scores[j] > in.scores[i];
        tied_pos_before += in.scores[j] == in.scores[i] && j < i;
      }
    }
    const double tp = static_cast<double>(above_pos + tied_pos_before + 1);
    sum += tp / (tp + static_cast<double>(above_neg));
  }
  return sum / static_cast<double>(pos);
}

inline double brute_dice(const Instance& in) {
  double best = 0.0;
  for (double t : std::set<double>(in.scores.begin(), in.scores.end())) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < in.scores.size(); ++i) {
      const bool pred = in.scores[i] >= t;
      const bool lab = in.labels[i] > 0.5;
      tp += pred && lab;
      fp += pred && !lab;
      fn += !pred && lab;
    }
    best = std::max(best, 2 * tp / (2 * tp + fp + fn));
  }
  return best;
}

inline double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double acc = 0.0;
  for (double p : pos) {
    for (double n : neg) acc += p > n ? 1.0 : p == n ? 0.5 : 0.0;
  }
  return acc / static_cast<double>(pos.size() * neg.size());
}

// ---------------------------------------------------------------------------
// Random Gaussian summaries

inline latent::Matrix random_matrix(Eigen::Index r, Eigen::Index c, RandomStream& rng) {
  latent::Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  }
  return m;
}

inline latent::GaussianSummary random_gaussian(Eigen::Index d, RandomStream& rng, bool rank_deficient = false) {
  latent::GaussianSummary g;
  g.mean = random_matrix(d, 1, rng).col(0);
  const latent::Matrix a = random_matrix(d, rank_deficient ? std::max<Eigen::Index>(1, d / 2) : d, rng);
  g.cov = a * a.transpose();
  g.n = 10;
  return g;
}

}  // namespace uadlab::testkit
