#pragma once

// Synthetic 2-D "brain" phantoms with subject-level variability, plus a
// hypometabolism simulator (multiplicative dimming of a fixed region) and
// subject-level cross-validation splits.
//
// Phantom layout, in each subject's normalized ellipse coordinates (u, v),
// rho = |(u, v)|:
//   - tissue at 0.78 x base intensity,
//   - a bright rim near rho = 0.82 (cortex analogue),
//   - two dark lobes around (+-0.22, 0.25) (ventricle analogue),
//   - low-frequency subject texture and per-visit smooth noise.
// Outside a one-pixel soft edge the image is exactly zero.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace uadlab::phantom {

struct PhantomSpec {
  std::size_t image_size = 32;
  std::size_t n_subjects = 0;
  std::size_t visits_min = 1;
  std::size_t visits_max = 3;
  double base_intensity_min = 0.6;
  double base_intensity_max = 0.9;
  double shape_jitter = 0.06;
  double noise_amplitude = 0.04;
  std::uint64_t seed = 0;

  bool operator==(const PhantomSpec&) const = default;

  // Nominal semi-axes as a fraction of the image side.
  static constexpr double kRadiusX = 0.32;
  static constexpr double kRadiusY = 0.38;

  void validate() const {
    if (image_size < 16) throw ConfigError("phantom.image_size must be >= 16");
    if (visits_min < 1 || visits_min > visits_max) {
      throw ConfigError("phantom visits range must satisfy 1 <= min <= max");
    }
    if (!(base_intensity_min > 0.0 && base_intensity_min < base_intensity_max &&
          base_intensity_max <= 1.0)) {
      throw ConfigError("phantom base intensity range must satisfy 0 < min < max <= 1");
    }
    if (!(shape_jitter >= 0.0 && shape_jitter < 0.5)) {
      throw ConfigError("phantom.shape_jitter must be in [0, 0.5)");
    }
    if (!(noise_amplitude >= 0.0)) throw ConfigError("phantom.noise_amplitude must be >= 0");
    const double s = static_cast<double>(image_size);
    const double reach = std::max(kRadiusX, kRadiusY) * s * (1.0 + shape_jitter) + 0.5 * shape_jitter * s;
    if (reach > 0.5 * s - 2.0) {
      throw ConfigError("phantom geometry impossible: ellipse may reach " + std::to_string(reach) +
                        " px from centre but only " + std::to_string(0.5 * s - 2.0) +
                        " px fit with a 2-pixel margin");
    }
  }
};

struct SubjectRecord {
  std::uint64_t id = 0;
  double center_x = 0.0;
  double center_y = 0.0;
  double radius_x = 0.0;
  double radius_y = 0.0;
  double rotation = 0.0;
  double base_intensity = 0.0;
  std::uint64_t texture_seed = 0;
  std::size_t visits = 1;

  bool operator==(const SubjectRecord&) const = default;
};

inline std::vector<SubjectRecord> generate_subjects(const PhantomSpec& spec) {
  spec.validate();
  const double s = static_cast<double>(spec.image_size);
  const double j = spec.shape_jitter;
  RandomStream rng = SeededRng(spec.seed).stream("subjects");
  std::vector<SubjectRecord> out;
  out.reserve(spec.n_subjects);
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    SubjectRecord r;
    r.id = i;
    r.center_x = 0.5 * s + 0.5 * j * s * rng.uniform(-1.0, 1.0);
    r.center_y = 0.5 * s + 0.5 * j * s * rng.uniform(-1.0, 1.0);
    r.radius_x = PhantomSpec::kRadiusX * s * (1.0 + j * rng.uniform(-1.0, 1.0));
    r.radius_y = PhantomSpec::kRadiusY * s * (1.0 + j * rng.uniform(-1.0, 1.0));
    r.rotation = 0.15 * rng.uniform(-1.0, 1.0);
    r.base_intensity = rng.uniform(spec.base_intensity_min, spec.base_intensity_max);
    r.texture_seed = rng.next_u64();
    r.visits = spec.visits_min + static_cast<std::size_t>(rng.below(spec.visits_max - spec.visits_min + 1));
    out.push_back(r);
  }
  return out;
}

namespace detail {

// Sum of a few random plane waves in normalized coordinates, peak amplitude
// bounded by `amplitude`.
struct SmoothField {
  static constexpr int kWaves = 4;
  double kx[kWaves]{}, ky[kWaves]{}, phase[kWaves]{}, weight[kWaves]{};

  SmoothField(std::uint64_t seed, double amplitude) {
    RandomStream rng(seed);
    for (int w = 0; w < kWaves; ++w) {
      const double freq = rng.uniform(0.5, 2.0) * std::numbers::pi;
      const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
      kx[w] = freq * std::cos(dir);
      ky[w] = freq * std::sin(dir);
      phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      weight[w] = amplitude / kWaves;
    }
  }

  double operator()(double u, double v) const {
    double acc = 0.0;
    for (int w = 0; w < kWaves; ++w) acc += weight[w] * std::cos(kx[w] * u + ky[w] * v + phase[w]);
    return acc;
  }
};

struct EllipseCoords {
  double u, v, rho;
};

inline EllipseCoords ellipse_coords(const SubjectRecord& s, double x, double y) {
  const double dx = x - s.center_x;
  const double dy = y - s.center_y;
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  const double u = (dx * c + dy * sn) / s.radius_x;
  const double v = (-dx * sn + dy * c) / s.radius_y;
  return {u, v, std::sqrt(u * u + v * v)};
}

inline double gauss(double t) { return std::exp(-t * t); }

}  // namespace detail

inline constexpr double kTextureAmplitude = 0.03;

// Renders one visit of a subject into an [S, S] image in [0, 1].
inline Tensor render_image(const SubjectRecord& subject, std::uint64_t visit_seed,
                           const PhantomSpec& spec) {
  const std::size_t n = spec.image_size;
  const detail::SmoothField texture(subject.texture_seed, kTextureAmplitude);
  const detail::SmoothField visit(uadlab::detail::fmix64(visit_seed ^ subject.texture_seed), spec.noise_amplitude);
  const double edge_scale = std::min(subject.radius_x, subject.radius_y);
  Tensor img(Shape{n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const auto e = detail::ellipse_coords(subject, c + 0.5, r + 0.5);
      const double edge = std::clamp((1.0 - e.rho) * edge_scale + 0.5, 0.0, 1.0);
      if (edge <= 0.0) continue;
      const double rim = 0.22 * detail::gauss((e.rho - 0.82) / 0.10);
      const double lobes = 0.45 * detail::gauss(std::hypot((std::abs(e.u) - 0.22) / 0.10, (e.v - 0.25) / 0.15));
      double tissue = subject.base_intensity * (0.78 + rim - lobes);
      tissue += texture(e.u, e.v);
      if (spec.noise_amplitude > 0.0) tissue += visit(e.u, e.v);
      img.at(r, c) = std::clamp(edge * std::clamp(tissue, 0.05, 1.0), 0.0, 1.0);
    }
  }
  return img;
}

// Pixels inside the nominal (un-jittered) phantom ellipse.
inline Tensor nominal_interior(const PhantomSpec& spec) {
  const std::size_t n = spec.image_size;
  const double s = static_cast<double>(n);
  SubjectRecord nominal;
  nominal.center_x = nominal.center_y = 0.5 * s;
  nominal.radius_x = PhantomSpec::kRadiusX * s;
  nominal.radius_y = PhantomSpec::kRadiusY * s;
  Tensor m(Shape{n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (detail::ellipse_coords(nominal, c + 0.5, r + 0.5).rho < 1.0) m.at(r, c) = 1.0;
    }
  }
  return m;
}

// Fixed anomaly region in image coordinates: a disc (in nominal ellipse
// coordinates) on the side opposite the dark lobes, away from the rim.
inline Tensor default_region(const PhantomSpec& spec) {
  spec.validate();
  const std::size_t n = spec.image_size;
  const double s = static_cast<double>(n);
  SubjectRecord nominal;
  nominal.center_x = nominal.center_y = 0.5 * s;
  nominal.radius_x = PhantomSpec::kRadiusX * s;
  nominal.radius_y = PhantomSpec::kRadiusY * s;
  constexpr double kCenterU = 0.10, kCenterV = -0.35, kRadius = 0.32;
  Tensor m(Shape{n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const auto e = detail::ellipse_coords(nominal, c + 0.5, r + 0.5);
      if (e.rho < 0.75 && std::hypot(e.u - kCenterU, e.v - kCenterV) < kRadius) m.at(r, c) = 1.0;
    }
  }
  return m;
}

// Intensity above which a pixel counts as phantom interior.
inline constexpr double kInteriorThreshold = 0.02;

struct SimulatedPair {
  Tensor x;
  Tensor x_prime;
  Tensor mask;
  double severity = 0.0;
  std::uint64_t subject_id = 0;
  std::string id;
  // Set when the pair carries no anomaly (zero severity).
  bool degenerate = false;
};

// x' = x - s * x * region; ground truth = region. The dimming has a hard
// edge: a partially dimmed ring outside the ground truth would let a perfect
// reconstruction rank healthy ring pixels above dim mask pixels.
inline SimulatedPair simulate_hypometabolism(const Tensor& x, const Tensor& region, double severity) {
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw DomainError("simulate_hypometabolism: severity " + std::to_string(severity) +
                      " outside [0, 1]");
  }
  if (x.rank() != 2 || x.shape() != region.shape()) {
    throw ShapeError("simulate_hypometabolism: image " + shape_str(x.shape()) + " vs region " +
                     shape_str(region.shape()));
  }
  bool visible = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (region[i] > 0.5 && x[i] > kInteriorThreshold) {
      visible = true;
      break;
    }
  }
  if (!visible) throw DataError("simulate_hypometabolism: region lies entirely outside the phantom");

  SimulatedPair pair;
  pair.x = x;
  pair.x_prime = x;
  pair.mask = Tensor(x.shape());
  pair.severity = severity;
  if (severity == 0.0) {
    pair.degenerate = true;
    return pair;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double weight = region[i] > 0.5 ? 1.0 : 0.0;
    pair.x_prime[i] = x[i] - severity * x[i] * weight;
    pair.mask[i] = weight;
  }
  return pair;
}

// ---------------------------------------------------------------------------
// Splits and standard datasets
// ---------------------------------------------------------------------------

struct FoldAssignment {
  std::vector<std::vector<std::uint64_t>> folds;

  std::size_t k() const { return folds.size(); }

  std::size_t fold_of(std::uint64_t subject) const {
    for (std::size_t f = 0; f < folds.size(); ++f) {
      if (std::find(folds[f].begin(), folds[f].end(), subject) != folds[f].end()) return f;
    }
    throw DataError("subject " + std::to_string(subject) + " is in no fold");
  }

  bool operator==(const FoldAssignment&) const = default;
};

// Shuffle subjects with the seed, then deal them round-robin into k folds.
inline FoldAssignment make_splits(std::vector<std::uint64_t> subject_ids, std::size_t k,
                                  std::uint64_t seed) {
  if (k == 0 || k > subject_ids.size()) {
    throw ConfigError("make_splits: k = " + std::to_string(k) + " with " +
                      std::to_string(subject_ids.size()) + " subjects");
  }
  RandomStream rng = SeededRng(seed).stream("splits");
  shuffle(std::span<std::uint64_t>(subject_ids), rng);
  FoldAssignment out;
  out.folds.resize(k);
  for (std::size_t i = 0; i < subject_ids.size(); ++i) out.folds[i % k].push_back(subject_ids[i]);
  return out;
}

struct ImageRecord {
  std::string id;
  std::uint64_t subject = 0;
  Tensor image;
};

struct SimulatedSet {
  std::string name;
  double severity = 0.0;
  std::vector<SimulatedPair> pairs;
};

struct DatasetSpec {
  PhantomSpec phantom;
  std::size_t n_train_subjects = 120;
  std::size_t n_test_cn = 30;
  std::size_t n_test_ad = 30;
  std::size_t folds = 5;
  std::vector<double> severities{0.3, 0.5};

  bool operator==(const DatasetSpec&) const = default;
};

inline std::string simulated_set_name(double severity) {
  return "test-AD-" + std::to_string(static_cast<int>(std::lround(severity * 100.0)));
}

struct StandardDatasets {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<ImageRecord> train;  // all training-pool images (every fold)
  FoldAssignment splits;
  std::vector<ImageRecord> test_cn;
  std::vector<SimulatedSet> simulated;

  const SimulatedSet& simulated_set(const std::string& name) const {
    for (const auto& s : simulated) {
      if (s.name == name) return s;
    }
    throw DataError("dataset has no simulated set '" + name + "'");
  }

  // Images of training subjects outside fold `f`, and the fold's own images.
  std::pair<std::vector<const ImageRecord*>, std::vector<const ImageRecord*>> fold_split(std::size_t f) const {
    if (f >= splits.k()) throw ConfigError("fold " + std::to_string(f) + " out of range");
    const auto& val_ids = splits.folds[f];
    std::vector<const ImageRecord*> tr, va;
    for (const auto& rec : train) {
      const bool is_val = std::find(val_ids.begin(), val_ids.end(), rec.subject) != val_ids.end();
      (is_val ? va : tr).push_back(&rec);
    }
    return {tr, va};
  }
};

inline std::string image_id(std::uint64_t subject, std::size_t visit) {
  return "s" + std::to_string(subject) + "_v" + std::to_string(visit);
}

// Training pool (subjects 0..n_train-1, several visits each), test-CN and the
// simulated sets (one visit each, disjoint subjects). Bit-exact for (spec, seed).
inline StandardDatasets build_standard_datasets(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.n_train_subjects < spec.folds || spec.n_test_cn < 2 || spec.n_test_ad < 1) {
    throw ConfigError("insufficient subjects: need >= folds training subjects, >= 2 test-CN and >= 1 test-AD");
  }
  if (spec.severities.empty()) throw ConfigError("dataset needs at least one severity");
  StandardDatasets ds;
  ds.spec = spec;
  ds.seed = seed;

  PhantomSpec ps = spec.phantom;
  ps.seed = seed;
  ps.n_subjects = spec.n_train_subjects + spec.n_test_cn + spec.n_test_ad;
  const auto subjects = generate_subjects(ps);
  const RandomStream visit_root = SeededRng(seed).stream("visits");
  auto visit_seed = [&](std::uint64_t subject, std::size_t visit) {
    return visit_root.split(subject).split(visit).next_u64();
  };

  std::vector<std::uint64_t> train_ids;
  for (std::size_t i = 0; i < spec.n_train_subjects; ++i) {
    const auto& s = subjects[i];
    train_ids.push_back(s.id);
    for (std::size_t v = 0; v < s.visits; ++v) {
      ds.train.push_back({image_id(s.id, v), s.id, render_image(s, visit_seed(s.id, v), ps)});
    }
  }
  ds.splits = make_splits(train_ids, spec.folds, seed);

  for (std::size_t i = spec.n_train_subjects; i < spec.n_train_subjects + spec.n_test_cn; ++i) {
    const auto& s = subjects[i];
    ds.test_cn.push_back({image_id(s.id, 0), s.id, render_image(s, visit_seed(s.id, 0), ps)});
  }

  const Tensor region = default_region(ps);
  for (double sev : spec.severities) {
    SimulatedSet set{simulated_set_name(sev), sev, {}};
    for (std::size_t i = spec.n_train_subjects + spec.n_test_cn; i < subjects.size(); ++i) {
      const auto& s = subjects[i];
      SimulatedPair pair = simulate_hypometabolism(render_image(s, visit_seed(s.id, 0), ps), region, sev);
      pair.subject_id = s.id;
      pair.id = image_id(s.id, 0);
      set.pairs.push_back(std::move(pair));
    }
    ds.simulated.push_back(std::move(set));
  }
  return ds;
}

}  // namespace uadlab::phantom
