#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace uadlab::diff {

// Builds a scalar loss on `tape` from the parameter leaves (same order as the
// tensors handed to grad_check). Any randomness must be fixed by the caller.
using LossFn = std::function<Var(Tape&, std::span<const Var>)>;

namespace detail {

inline double evaluate_loss(const LossFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  return fn(tape, vars).value().item();
}

}  // namespace detail

// Largest relative discrepancy between reverse-mode gradients and central
// finite differences with step h, over every entry of every parameter:
//   |g_auto - g_fd| / max(1e-8, |g_auto| + |g_fd|, max_j |g_auto_j|)
// where j runs over the entries of the same parameter tensor. Entries far
// below the tensor's scale are judged against that scale, since their
// finite-difference estimate is dominated by round-off in the loss
// (about ulp(loss) / 2h). With tensor_scaled = false the denominator is the
// plain entrywise max(1e-8, |g_auto| + |g_fd|).
inline double grad_check(const LossFn& fn, std::vector<Tensor> params, double h, bool tensor_scaled = true) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.parameter(p));
    Var loss = fn(tape, vars);
    const double first = loss.value().item();
    const double second = detail::evaluate_loss(fn, params);
    if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second)) {
      throw Error("grad_check: loss function is not deterministic (two forward passes gave " +
                  std::to_string(first) + " and " + std::to_string(second) +
                  "); fix the noise inputs");
    }
    Gradients grads = backward(tape, loss);
    for (const Var& v : vars) {
      const Tensor* g = grads.find(v);
      analytic.push_back(g ? *g : Tensor(v.shape()));
    }
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double scale = 1e-8;
    if (tensor_scaled) {
      for (double g : analytic[k].data()) scale = std::max(scale, std::abs(g));
    }
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + h;
      const double plus = detail::evaluate_loss(fn, params);
      params[k][i] = saved - h;
      const double minus = detail::evaluate_loss(fn, params);
      params[k][i] = saved;
      const double fd = (plus - minus) / (2.0 * h);
      const double ad = analytic[k][i];
      const double rel = std::abs(ad - fd) / std::max(scale, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace uadlab::diff
