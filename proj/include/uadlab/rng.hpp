#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace uadlab {

namespace detail {

// Murmur3 64-bit finalizer.
constexpr std::uint64_t fmix64(std::uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based random stream: draw i is a pure function of (key, i), so two
// streams with different keys never influence each other. All transforms to
// floating point are written out here so results are identical on every
// platform (the std distributions are implementation-defined).
class RandomStream {
 public:
  constexpr explicit RandomStream(std::uint64_t key = 0) : key_(key) {}

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t position() const { return counter_; }

  constexpr std::uint64_t next_u64() {
    const std::uint64_t c = counter_++;
    return detail::fmix64(detail::fmix64(key_ ^ (c * 0x9e3779b97f4a7c15ULL)) + c);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection, without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; consumes two draws per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
  }

  // Derived stream keyed by this stream's key and a label.
  RandomStream split(std::string_view label) const {
    return RandomStream(detail::fmix64(key_ ^ detail::fnv1a(label)));
  }

  RandomStream split(std::uint64_t index) const {
    return RandomStream(detail::fmix64(key_ + detail::fmix64(index + 0x632be59bd9b4e019ULL)));
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Root of all randomness for one experimental unit (a seed). Named substreams
// ("init", "shuffle", "noise", ...) are independent of one another.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : root_(detail::fmix64(seed ^ 0x5eed5eed5eed5eedULL)) {}

  RandomStream stream(std::string_view name) const { return root_.split(name); }

 private:
  RandomStream root_;
};

inline SeededRng seeded_rng(std::uint64_t seed) { return SeededRng(seed); }

// Fisher-Yates with the stream's own integer draws.
template <typename T>
void shuffle(std::span<T> items, RandomStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace uadlab
