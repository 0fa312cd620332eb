#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace uadlab {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers for a fixed list of parameter tensors.
class AdamState {
 public:
  AdamState() = default;

  AdamState(AdamConfig config, std::span<const Tensor> params) : config_(config) {
    first_.reserve(params.size());
    second_.reserve(params.size());
    for (const Tensor& p : params) {
      first_.emplace_back(p.shape());
      second_.emplace_back(p.shape());
    }
  }

  const AdamConfig& config() const { return config_; }
  std::uint64_t step() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return first_; }
  const std::vector<Tensor>& second_moments() const { return second_; }

  friend void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

 private:
  AdamConfig config_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::uint64_t t_ = 0;
};

// One bias-corrected Adam update of every parameter, in place.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.first_.size()) + " moment buffers");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape() != grads[k].shape() || params[k].shape() != state.first_[k].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " has shape " +
                       shape_str(params[k].shape()) + " but gradient " +
                       shape_str(grads[k].shape()) + " and moments " +
                       shape_str(state.first_[k].shape()));
    }
  }
  const AdamConfig& c = state.config_;
  state.t_ += 1;
  const double t = static_cast<double>(state.t_);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = state.first_[k].data();
    auto v = state.second_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace uadlab
