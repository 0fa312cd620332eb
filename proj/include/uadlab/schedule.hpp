#pragma once

#include <cstdint>
#include <string>

#include "errors.hpp"

namespace uadlab::vae {

enum class ScheduleKind { constant, cyclical };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::constant ? "constant" : "cyclical";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "cyclical") return ScheduleKind::cyclical;
  throw ConfigError("unknown schedule kind '" + s + "' (expected constant or cyclical)");
}

// KL weight over training. A cyclical schedule splits training into
// n_cycles equal cycles; in each, beta ramps linearly from 0 on the first
// step to beta_max on the last. Leftover steps after the last full cycle
// hold beta_max.
struct BetaSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double beta_max = 1.0;
  std::uint64_t n_cycles = 3;
  std::uint64_t total_steps = 1;

  static BetaSchedule constant(double beta, std::uint64_t total_steps = 1) {
    return {ScheduleKind::constant, beta, 3, total_steps};
  }
  static BetaSchedule cyclical(double beta_max, std::uint64_t n_cycles, std::uint64_t total_steps) {
    return {ScheduleKind::cyclical, beta_max, n_cycles, total_steps};
  }

  void validate() const {
    if (!(beta_max >= 0.0)) throw ConfigError("beta_max must be non-negative");
    if (total_steps == 0) throw ConfigError("total_steps must be positive");
    if (kind == ScheduleKind::cyclical) {
      if (n_cycles == 0) throw ConfigError("n_cycles must be positive");
      if (total_steps < n_cycles) {
        throw ConfigError("cyclical schedule needs total_steps (" + std::to_string(total_steps) +
                          ") >= n_cycles (" + std::to_string(n_cycles) + ")");
      }
    }
  }

  std::uint64_t cycle_length() const { return total_steps / n_cycles; }
};

inline double beta_at(const BetaSchedule& s, std::uint64_t step) {
  s.validate();
  if (step >= s.total_steps) {
    throw ConfigError("beta_at: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(s.total_steps) + ")");
  }
  if (s.kind == ScheduleKind::constant) return s.beta_max;
  const std::uint64_t len = s.cycle_length();
  if (step >= s.n_cycles * len) return s.beta_max;
  // One-step cycles have no ramp.
  if (len < 2) return 0.0;
  const std::uint64_t pos = step % len;
  if (pos == len - 1) return s.beta_max;
  return s.beta_max * static_cast<double>(pos) / static_cast<double>(len - 1);
}

}  // namespace uadlab::vae
