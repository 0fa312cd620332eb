#pragma once

// Dataset directory layout:
//   manifest.json            spec, seed, split assignment, file index
//   tensors/<set>/<id>.tnsr  one TNSR file per image (pairs: x, x_prime, mask)

#include <filesystem>
#include <string>
#include <vector>

#include "json_util.hpp"
#include "phantom.hpp"
#include "tensor.hpp"

namespace uadlab::phantom {

inline constexpr const char* kDatasetFormat = "uadlab-dataset";
inline constexpr int kDatasetVersion = 1;

inline json to_json(const PhantomSpec& s) {
  return {{"image_size", s.image_size},
          {"visits_min", s.visits_min},
          {"visits_max", s.visits_max},
          {"base_intensity_min", s.base_intensity_min},
          {"base_intensity_max", s.base_intensity_max},
          {"shape_jitter", s.shape_jitter},
          {"noise_amplitude", s.noise_amplitude}};
}

inline PhantomSpec phantom_spec_from_json(const json& j) {
  require_known_keys(j, {"image_size", "visits_min", "visits_max", "base_intensity_min",
                         "base_intensity_max", "shape_jitter", "noise_amplitude"},
                     "phantom");
  PhantomSpec s;
  read_opt(j, "image_size", s.image_size, "phantom");
  read_opt(j, "visits_min", s.visits_min, "phantom");
  read_opt(j, "visits_max", s.visits_max, "phantom");
  read_opt(j, "base_intensity_min", s.base_intensity_min, "phantom");
  read_opt(j, "base_intensity_max", s.base_intensity_max, "phantom");
  read_opt(j, "shape_jitter", s.shape_jitter, "phantom");
  read_opt(j, "noise_amplitude", s.noise_amplitude, "phantom");
  s.validate();
  return s;
}

inline json to_json(const DatasetSpec& s) {
  return {{"phantom", to_json(s.phantom)},
          {"n_train_subjects", s.n_train_subjects},
          {"n_test_cn", s.n_test_cn},
          {"n_test_ad", s.n_test_ad},
          {"folds", s.folds},
          {"severities", s.severities}};
}

inline DatasetSpec dataset_spec_from_json(const json& j) {
  require_known_keys(j, {"phantom", "n_train_subjects", "n_test_cn", "n_test_ad", "folds", "severities"},
                     "dataset");
  DatasetSpec s;
  if (j.contains("phantom")) s.phantom = phantom_spec_from_json(j.at("phantom"));
  read_opt(j, "n_train_subjects", s.n_train_subjects, "dataset");
  read_opt(j, "n_test_cn", s.n_test_cn, "dataset");
  read_opt(j, "n_test_ad", s.n_test_ad, "dataset");
  read_opt(j, "folds", s.folds, "dataset");
  read_opt(j, "severities", s.severities, "dataset");
  for (double sev : s.severities) {
    if (!(sev >= 0.0 && sev <= 1.0)) throw ConfigError("dataset.severities must lie in [0, 1]");
  }
  return s;
}

// Data-generation config file: {"seed": N, "dataset": {...}}.
struct GenDataConfig {
  DatasetSpec spec;
  std::uint64_t seed = 0;
};

inline GenDataConfig gen_data_config_from_json(const json& j) {
  require_known_keys(j, {"seed", "dataset"}, "gen-data config");
  GenDataConfig c;
  read_opt(j, "seed", c.seed, "gen-data config");
  if (j.contains("dataset")) c.spec = dataset_spec_from_json(j.at("dataset"));
  return c;
}

namespace detail {

inline std::string save_tensor(const std::filesystem::path& root, const std::string& rel, const Tensor& t) {
  const auto path = root / rel;
  std::filesystem::create_directories(path.parent_path());
  write_tensor_file(path.string(), t);
  return rel;
}

}  // namespace detail

inline json manifest_header(const DatasetSpec& spec, std::uint64_t seed) {
  return {{"format", kDatasetFormat}, {"version", kDatasetVersion}, {"seed", seed}, {"spec", to_json(spec)}};
}

inline void write_dataset(const StandardDatasets& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m = manifest_header(ds.spec, ds.seed);
  m["splits"] = ds.splits.folds;
  json train = json::array();
  for (const auto& r : ds.train) {
    train.push_back({{"id", r.id}, {"subject", r.subject},
                     {"file", detail::save_tensor(dir, "tensors/train/" + r.id + ".tnsr", r.image)}});
  }
  m["train"] = std::move(train);
  json cn = json::array();
  for (const auto& r : ds.test_cn) {
    cn.push_back({{"id", r.id}, {"subject", r.subject},
                  {"file", detail::save_tensor(dir, "tensors/test-CN/" + r.id + ".tnsr", r.image)}});
  }
  m["test_cn"] = std::move(cn);
  json sims = json::array();
  for (const auto& set : ds.simulated) {
    json pairs = json::array();
    for (const auto& p : set.pairs) {
      const std::string base = "tensors/" + set.name + "/" + p.id;
      pairs.push_back({{"id", p.id},
                       {"subject", p.subject_id},
                       {"degenerate", p.degenerate},
                       {"x", detail::save_tensor(dir, base + "_x.tnsr", p.x)},
                       {"x_prime", detail::save_tensor(dir, base + "_xprime.tnsr", p.x_prime)},
                       {"mask", detail::save_tensor(dir, base + "_mask.tnsr", p.mask)}});
    }
    sims.push_back({{"name", set.name}, {"severity", set.severity}, {"pairs", std::move(pairs)}});
  }
  m["simulated"] = std::move(sims);
  write_json_file((dir / "manifest.json").string(), m);
}

inline json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw DataError("no dataset manifest at " + path.string());
  std::ifstream in(path);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("corrupt manifest " + path.string() + ": " + e.what());
  }
  if (!m.is_object() || m.value("format", "") != kDatasetFormat || m.value("version", 0) != kDatasetVersion) {
    throw DataError("corrupt manifest " + path.string() + ": wrong format or version");
  }
  return m;
}

inline StandardDatasets read_dataset(const std::filesystem::path& dir) {
  const json m = read_manifest(dir);
  try {
    StandardDatasets ds;
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.spec = dataset_spec_from_json(m.at("spec"));
    ds.splits.folds = m.at("splits").get<std::vector<std::vector<std::uint64_t>>>();
    auto load = [&](const json& f) { return read_tensor_file((dir / f.get<std::string>()).string()); };
    for (const auto& r : m.at("train")) {
      ds.train.push_back({r.at("id"), r.at("subject"), load(r.at("file"))});
    }
    for (const auto& r : m.at("test_cn")) {
      ds.test_cn.push_back({r.at("id"), r.at("subject"), load(r.at("file"))});
    }
    for (const auto& s : m.at("simulated")) {
      SimulatedSet set{s.at("name"), s.at("severity"), {}};
      for (const auto& p : s.at("pairs")) {
        SimulatedPair pair;
        pair.id = p.at("id");
        pair.subject_id = p.at("subject");
        pair.degenerate = p.at("degenerate");
        pair.severity = set.severity;
        pair.x = load(p.at("x"));
        pair.x_prime = load(p.at("x_prime"));
        pair.mask = load(p.at("mask"));
        set.pairs.push_back(std::move(pair));
      }
      ds.simulated.push_back(std::move(set));
    }
    return ds;
  } catch (const json::exception& e) {
    throw DataError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace uadlab::phantom
