#pragma once

// Fully connected VAE with two posterior families:
//   diagonal Gaussian  q(z|x) = N(mu(x), diag(exp(log_var(x))))
//   sparse             q(z|x) = N(mu(x), diag(alpha * (mu(x)^2 + eps)))
// where log_alpha is a learned d-vector shared by all samples.
//
// The decoder ends in a sigmoid, so reconstructions lie in (0, 1).

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace uadlab::vae {

using diff::Tape;
using diff::Var;

enum class Activation { relu, tanh };
enum class PosteriorKind { diagonal_gaussian, sparse };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
inline const char* to_string(PosteriorKind k) {
  return k == PosteriorKind::diagonal_gaussian ? "diagonal" : "sparse";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu or tanh)");
}

inline PosteriorKind posterior_from_string(const std::string& s) {
  if (s == "diagonal" || s == "diagonal_gaussian") return PosteriorKind::diagonal_gaussian;
  if (s == "sparse") return PosteriorKind::sparse;
  throw ConfigError("unknown posterior kind '" + s + "' (expected diagonal or sparse)");
}

// Floor on mu^2 inside the sparse posterior variance.
inline constexpr double kSparseEps = 1e-8;
inline constexpr double kLogAlphaInit = -3.0;

struct ArchConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{256, 128};
  std::size_t latent_dim = 16;
  Activation activation = Activation::relu;
  PosteriorKind posterior = PosteriorKind::diagonal_gaussian;

  void validate() const {
    if (input_dim < 1) throw ConfigError("arch.input_dim must be >= 1");
    if (latent_dim < 1) throw ConfigError("arch.latent_dim must be >= 1");
    for (std::size_t h : hidden) {
      if (h < 1) throw ConfigError("arch.hidden widths must be >= 1");
    }
  }

  bool operator==(const ArchConfig&) const = default;
};

struct ParamSpec {
  std::string name;
  Shape shape;
};

// Parameter names and shapes, in the order ModelParams stores them.
inline std::vector<ParamSpec> param_layout(const ArchConfig& arch) {
  arch.validate();
  std::vector<ParamSpec> out;
  std::size_t width = arch.input_dim;
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    out.push_back({p + ".weight", {width, arch.hidden[i]}});
    out.push_back({p + ".bias", {arch.hidden[i]}});
    width = arch.hidden[i];
  }
  const std::size_t head =
      arch.posterior == PosteriorKind::diagonal_gaussian ? 2 * arch.latent_dim : arch.latent_dim;
  out.push_back({"enc.head.weight", {width, head}});
  out.push_back({"enc.head.bias", {head}});

  width = arch.latent_dim;
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
    const std::size_t h = arch.hidden[arch.hidden.size() - 1 - i];
    const std::string p = "dec." + std::to_string(i);
    out.push_back({p + ".weight", {width, h}});
    out.push_back({p + ".bias", {h}});
    width = h;
  }
  out.push_back({"dec.out.weight", {width, arch.input_dim}});
  out.push_back({"dec.out.bias", {arch.input_dim}});
  if (arch.posterior == PosteriorKind::sparse) out.push_back({"log_alpha", {arch.latent_dim}});
  return out;
}

struct ModelParams {
  ArchConfig arch;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  // All-zero parameters (log_alpha excepted, which takes its initial value).
  static ModelParams zeros(const ArchConfig& arch) {
    ModelParams p;
    p.arch = arch;
    for (auto& spec : param_layout(arch)) {
      const double fill = spec.name == "log_alpha" ? kLogAlphaInit : 0.0;
      p.names.push_back(spec.name);
      p.tensors.emplace_back(spec.shape, fill);
    }
    return p;
  }

  const Tensor& get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return tensors[i];
    }
    throw Error("no parameter named '" + name + "'");
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors) n += t.size();
    return n;
  }

  void validate() const {
    const auto layout = param_layout(arch);
    if (layout.size() != tensors.size() || names.size() != tensors.size()) {
      throw ShapeError("parameter list does not match the architecture layout");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (layout[i].name != names[i] || layout[i].shape != tensors[i].shape()) {
        throw ShapeError("parameter '" + names[i] + "' has shape " + shape_str(tensors[i].shape()) +
                         ", layout expects '" + layout[i].name + "' " + shape_str(layout[i].shape));
      }
      for (double v : tensors[i].data()) {
        if (!std::isfinite(v)) throw NonFiniteError("parameter '" + names[i] + "' is not finite");
      }
    }
  }

  bool operator==(const ModelParams&) const = default;
};

// Parameters bound as leaves on a tape.
struct ModelVars {
  const ArchConfig* arch = nullptr;
  std::vector<Var> vars;

  Var operator[](std::size_t i) const { return vars[i]; }
  Var log_alpha() const { return vars.back(); }
};

inline ModelVars bind(Tape& tape, const ModelParams& params, bool trainable) {
  ModelVars mv{&params.arch, {}};
  mv.vars.reserve(params.tensors.size());
  for (const Tensor& t : params.tensors) {
    mv.vars.push_back(trainable ? tape.parameter(t) : tape.constant(t));
  }
  return mv;
}

struct Posterior {
  Var mu;
  Var log_var;
  Var log_alpha;  // sparse kind only; detached otherwise
  PosteriorKind kind = PosteriorKind::diagonal_gaussian;

  bool has_log_alpha() const { return log_alpha.tape != nullptr; }
};

namespace detail {

inline Var activate(Var h, Activation a) {
  return a == Activation::relu ? diff::relu(h) : diff::tanh(h);
}

inline Var affine(Var x, Var w, Var b) { return diff::add(diff::matmul(x, w), b); }

// Accepts [B, D] or anything with exactly D entries (a single sample).
inline Var as_batch(Var x, std::size_t width, const char* what) {
  const Tensor& v = x.value();
  if (v.rank() == 2 && v.dim(1) == width) return x;
  if (v.size() == width) return diff::reshape(x, {1, width});
  throw ShapeError(std::string(what) + ": expected " + std::to_string(width) +
                   " features per sample, got shape " + shape_str(v.shape()));
}

}  // namespace detail

inline Posterior encode(Var x, const ModelVars& p) {
  const ArchConfig& arch = *p.arch;
  Var h = detail::as_batch(x, arch.input_dim, "encode");
  std::size_t k = 0;
  for (std::size_t i = 0; i < arch.hidden.size(); ++i, k += 2) {
    h = detail::activate(detail::affine(h, p[k], p[k + 1]), arch.activation);
  }
  Var head = detail::affine(h, p[k], p[k + 1]);
  const std::size_t d = arch.latent_dim;
  Posterior post;
  post.kind = arch.posterior;
  if (arch.posterior == PosteriorKind::diagonal_gaussian) {
    post.mu = diff::slice(head, 1, 0, d);
    post.log_var = diff::slice(head, 1, d, 2 * d);
  } else {
    post.mu = head;
    post.log_alpha = p.log_alpha();
    post.log_var = diff::add(diff::log(diff::add(diff::square(head), kSparseEps)), post.log_alpha);
  }
  return post;
}

// z = mu + exp(log_var / 2) * noise
inline Var reparameterize(const Posterior& post, Var noise) {
  if (noise.shape() != post.mu.shape()) {
    throw ShapeError("reparameterize: noise shape " + shape_str(noise.shape()) +
                     " differs from posterior shape " + shape_str(post.mu.shape()));
  }
  Var sigma = diff::exp(diff::scale(post.log_var, 0.5));
  return diff::add(post.mu, diff::mul(sigma, noise));
}

inline Var decode(Var z, const ModelVars& p) {
  const ArchConfig& arch = *p.arch;
  Var h = detail::as_batch(z, arch.latent_dim, "decode");
  std::size_t k = 2 * arch.hidden.size() + 2;
  for (std::size_t i = 0; i < arch.hidden.size(); ++i, k += 2) {
    h = detail::activate(detail::affine(h, p[k], p[k + 1]), arch.activation);
  }
  return diff::sigmoid(detail::affine(h, p[k], p[k + 1]));
}

// Per-sample 1/2 sum_i (sigma_i^2 + mu_i^2 - 1 - log sigma_i^2), shape [B].
inline Var kl_diag_gaussian(const Posterior& post) {
  Var terms = diff::add(diff::sub(diff::add(diff::exp(post.log_var), diff::square(post.mu)),
                                  post.log_var),
                        -1.0);
  return diff::scale(diff::sum_last(terms), 0.5);
}

// Variational-dropout KL approximation against the log-uniform prior,
// summed over latent dimensions:
//   k1 - k1 * sigmoid(k2 + k3 * log_alpha) + 1/2 log(1 + 1/alpha)
inline constexpr double kSparseK1 = 0.63576;
inline constexpr double kSparseK2 = 1.87320;
inline constexpr double kSparseK3 = 1.48695;

inline Var kl_sparse(Var log_alpha) {
  Var s = diff::sigmoid(diff::add(diff::scale(log_alpha, kSparseK3), kSparseK2));
  Var per_dim = diff::add(diff::add(diff::scale(s, -kSparseK1), kSparseK1),
                          diff::scale(diff::softplus(diff::scale(log_alpha, -1.0)), 0.5));
  return diff::sum(per_dim);
}

struct LossBreakdown {
  double total = 0.0;
  double recon_term = 0.0;
  double kl_term = 0.0;
  double beta_used = 0.0;
};

struct LossTerms {
  Var total;
  Var recon;
  Var kl;
  double beta = 0.0;

  LossBreakdown values() const {
    return {total.value().item(), recon.value().item(), kl.value().item(), beta};
  }
};

// Negative beta-weighted ELBO (to be minimized):
//   recon = batch mean of 1/2 ||x - x_hat||^2,  kl = batch mean KL,
//   total = recon + beta * kl.
inline LossTerms elbo_loss(Var x, Var x_hat, const Posterior& post, double beta) {
  if (!(beta >= 0.0)) throw DomainError("elbo_loss: beta must be non-negative");
  const std::size_t width = x_hat.value().rank() == 2 ? x_hat.value().dim(1) : x_hat.size();
  Var xb = detail::as_batch(x, width, "elbo_loss");
  Var xh = detail::as_batch(x_hat, width, "elbo_loss");
  if (xb.shape() != xh.shape()) {
    throw ShapeError("elbo_loss: input " + shape_str(xb.shape()) + " vs reconstruction " +
                     shape_str(xh.shape()));
  }
  LossTerms out;
  out.beta = beta;
  out.recon = diff::mean(diff::scale(diff::sum_last(diff::square(diff::sub(xb, xh))), 0.5));
  if (post.kind == PosteriorKind::sparse) {
    if (!post.has_log_alpha()) throw Error("elbo_loss: sparse posterior without log_alpha");
    out.kl = kl_sparse(post.log_alpha);
  } else {
    out.kl = diff::mean(kl_diag_gaussian(post));
  }
  out.total = diff::add(out.recon, diff::scale(out.kl, beta));
  return out;
}

// One stochastic training objective: encode, z = mu + sigma * noise, decode,
// ELBO. `noise` is [B, d] standard normal, fixed by the caller.
inline LossTerms model_loss(Var x, Var noise, const ModelVars& p, double beta) {
  Posterior post = encode(x, p);
  Var x_hat = decode(reparameterize(post, noise), p);
  return elbo_loss(x, x_hat, post, beta);
}

// ---------------------------------------------------------------------------
// Value-level helpers (no gradients)
// ---------------------------------------------------------------------------

struct PosteriorValues {
  Tensor mu;
  Tensor log_var;
};

inline PosteriorValues encode(const Tensor& x, const ModelParams& params) {
  Tape tape;
  ModelVars mv = bind(tape, params, false);
  Posterior post = encode(tape.constant(x), mv);
  return {post.mu.value(), post.log_var.value()};
}

inline Tensor decode(const Tensor& z, const ModelParams& params) {
  Tape tape;
  ModelVars mv = bind(tape, params, false);
  return decode(tape.constant(z), mv).value();
}

// x_hat = D(mu(x)); noise-free. Output has the shape of x.
inline Tensor reconstruct(const Tensor& x, const ModelParams& params) {
  Tape tape;
  ModelVars mv = bind(tape, params, false);
  Posterior post = encode(tape.constant(x), mv);
  Tensor out = decode(post.mu, mv).value();
  if (x.rank() == 2 && x.dim(1) == params.arch.input_dim) return out;
  return out.reshaped(x.shape());
}

}  // namespace uadlab::vae
