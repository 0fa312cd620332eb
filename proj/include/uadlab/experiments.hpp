#pragma once

// Experiment driver: sweep (beta x d grid), seed study (latent W2 vs rMSE) and
// method comparison. Every (cell, seed, fold) run owns a directory under
// <out>/runs; a run whose status, resolved config and dataset match is
// reused instead of retrained (RunIndex contract).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "csv.hpp"
#include "dataset_io.hpp"
#include "format.hpp"
#include "json_util.hpp"
#include "latent.hpp"
#include "metrics.hpp"
#include "svg.hpp"
#include "training.hpp"

namespace uadlab::exp {

namespace fs = std::filesystem;
using training::TrainConfig;

enum class ExperimentKind { sweep, seed_study, compare };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::sweep: return "sweep";
    case ExperimentKind::seed_study: return "seed-study";
    case ExperimentKind::compare: return "compare";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "sweep") return ExperimentKind::sweep;
  if (s == "seed-study") return ExperimentKind::seed_study;
  if (s == "compare") return ExperimentKind::compare;
  throw ConfigError("unknown experiment kind '" + s + "' (expected sweep, seed-study or compare)");
}

// One row of the comparison table: a posterior family plus a beta schedule.
struct Method {
  std::string name;
  vae::PosteriorKind posterior = vae::PosteriorKind::diagonal_gaussian;
  vae::BetaSchedule schedule;
};

inline Method constant_method(double beta) {
  return {"beta" + fmt_double(beta), vae::PosteriorKind::diagonal_gaussian, vae::BetaSchedule::constant(beta)};
}

inline Method cyclical_method(double beta_max, std::uint64_t cycles = 3) {
  return {"cyclical" + fmt_double(beta_max), vae::PosteriorKind::diagonal_gaussian,
          vae::BetaSchedule::cyclical(beta_max, cycles, 1)};
}

inline Method sparse_method(double beta) {
  return {"sparse", vae::PosteriorKind::sparse, vae::BetaSchedule::constant(beta)};
}

// Table-1 rows: beta 1/10/30/50, cyclical 30/50, sparse (at the baseline beta).
inline std::vector<Method> default_methods(double baseline_beta = 10.0) {
  return {constant_method(1),    constant_method(10),   constant_method(30), constant_method(50),
          cyclical_method(30),   cyclical_method(50),   sparse_method(baseline_beta)};
}

// How compare combines folds and seeds: "paired" runs i = 0..n-1 on
// (fold i mod k, seed first_seed + i); "product" runs every fold x seed.
enum class Pairing { paired, product };

struct DataSource {
  std::string dir;                              // dataset written by gen-data
  std::optional<phantom::GenDataConfig> inline_spec;  // or generated in memory
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::sweep;
  TrainConfig base;
  std::vector<double> betas{0.1, 1, 10, 100};
  std::vector<std::size_t> latent_dims{4, 16, 64};
  std::size_t n_seeds = 5;
  std::uint64_t first_seed = 1;
  std::vector<Method> methods = default_methods();
  Pairing pairing = Pairing::paired;
  double study_severity = 0.3;   // seed study: rMSE / W2 on this simulated set
  bool diagonal_w2 = false;      // fit diagonal latent covariances instead of full
  DataSource data;

  void validate() const {
    base.validate();
    if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
    if (kind == ExperimentKind::sweep && (betas.empty() || latent_dims.empty())) {
      throw ConfigError("sweep grid must be nonempty");
    }
    if (kind == ExperimentKind::seed_study && n_seeds < 2) throw ConfigError("seed study needs n_seeds >= 2");
    if (kind == ExperimentKind::compare && methods.empty()) throw ConfigError("compare needs at least one method");
    for (double b : betas) {
      if (!(b >= 0.0)) throw ConfigError("sweep betas must be non-negative");
    }
    for (std::size_t d : latent_dims) {
      if (d < 1) throw ConfigError("sweep latent dims must be >= 1");
    }
    for (const auto& m : methods) {
      if (m.name.empty()) throw ConfigError("method names must be nonempty");
      if (m.name.find_first_of(",/\\ ") != std::string::npos) {
        throw ConfigError("method name '" + m.name + "' may not contain commas, slashes or spaces");
      }
    }
  }

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < n_seeds; ++i) s.push_back(first_seed + i);
    return s;
  }
};

inline Method method_from_json(const json& j) {
  require_known_keys(j, {"name", "posterior", "schedule"}, "method");
  Method m;
  if (!j.contains("name")) throw ConfigError("method needs a name");
  read_opt(j, "name", m.name, "method");
  std::string post = "diagonal";
  read_opt(j, "posterior", post, "method");
  m.posterior = vae::posterior_from_string(post);
  if (j.contains("schedule")) m.schedule = training::schedule_from_json(j.at("schedule"));
  return m;
}

inline json to_json(const Method& m) {
  return {{"name", m.name}, {"posterior", vae::to_string(m.posterior)}, {"schedule", training::to_json(m.schedule)}};
}

// "data" names a dataset directory written by gen-data; "dataset" instead
// embeds a gen-data config and builds the data in memory. With neither, the
// caller supplies the directory (the CLI's --data or default location).
inline ExperimentSpec experiment_spec_from_json(const json& j) {
  require_known_keys(j,
                     {"kind", "train", "betas", "latent_dims", "n_seeds", "first_seed", "methods", "pairing",
                      "study_severity", "diagonal_w2", "data", "dataset"},
                     "experiment");
  ExperimentSpec s;
  std::string kind;
  read_opt(j, "kind", kind, "experiment");
  if (kind.empty()) throw ConfigError("experiment needs \"kind\"");
  s.kind = experiment_kind_from_string(kind);
  if (j.contains("train")) s.base = training::train_config_from_json(j.at("train"));
  read_opt(j, "betas", s.betas, "experiment");
  read_opt(j, "latent_dims", s.latent_dims, "experiment");
  read_opt(j, "n_seeds", s.n_seeds, "experiment");
  read_opt(j, "first_seed", s.first_seed, "experiment");
  if (j.contains("methods")) {
    s.methods.clear();
    for (const auto& m : j.at("methods")) s.methods.push_back(method_from_json(m));
  }
  std::string pairing = "paired";
  read_opt(j, "pairing", pairing, "experiment");
  if (pairing == "paired") {
    s.pairing = Pairing::paired;
  } else if (pairing == "product") {
    s.pairing = Pairing::product;
  } else {
    throw ConfigError("experiment.pairing must be \"paired\" or \"product\"");
  }
  read_opt(j, "study_severity", s.study_severity, "experiment");
  read_opt(j, "diagonal_w2", s.diagonal_w2, "experiment");
  if (j.contains("data") && j.contains("dataset")) {
    throw ConfigError("experiment: give either \"data\" (a dataset directory) or \"dataset\", not both");
  }
  if (j.contains("data")) {
    read_opt(j, "data", s.data.dir, "experiment");
  }
  if (j.contains("dataset")) s.data.inline_spec = phantom::gen_data_config_from_json(j.at("dataset"));
  s.validate();
  return s;
}

inline phantom::StandardDatasets load_data(const DataSource& src) {
  if (src.inline_spec) return phantom::build_standard_datasets(src.inline_spec->spec, src.inline_spec->seed);
  if (src.dir.empty()) throw ConfigError("experiment has no dataset (set \"data\" or \"dataset\")");
  if (!fs::exists(fs::path(src.dir) / "manifest.json")) {
    throw DataError("dataset not found at " + src.dir + " (run gen-data first)");
  }
  return phantom::read_dataset(src.dir);
}

// ---------------------------------------------------------------------------
// Metrics table columns

// "test-AD-30" -> "30".
inline std::string set_suffix(const eval::SetMetrics& s) {
  return std::to_string(static_cast<int>(std::lround(s.severity * 100.0)));
}

inline std::vector<std::string> metric_columns(const std::vector<double>& severities) {
  std::vector<std::string> cols{"hhMSE", "SSIM"};
  for (double sev : severities) {
    const std::string k = std::to_string(static_cast<int>(std::lround(sev * 100.0)));
    for (const char* m : {"ahMSE", "rMSE", "AP", "Dice"}) cols.push_back(m + k);
  }
  cols.push_back("AUC");
  return cols;
}

inline std::vector<double> metric_values(const eval::MetricsRecord& r) {
  std::vector<double> v{r.hh_mse, r.ssim};
  for (const auto& s : r.sets) {
    v.push_back(s.ah_mse);
    v.push_back(s.rmse);
    v.push_back(s.ap);
    v.push_back(s.dice);
  }
  v.push_back(r.auc);
  return v;
}

// ---------------------------------------------------------------------------
// Runs

struct RunSpec {
  std::string cell;  // grid cell or method name
  std::string dir;   // relative to <out>/runs
  TrainConfig config;
  double beta = 0.0;
  std::size_t latent_dim = 0;
};

struct RunOptions {
  std::size_t jobs = 1;
  bool force = false;
  bool latents = false;  // seed study: dump codes and compute normalized W2
  double study_severity = 0.3;
  bool diagonal_w2 = false;
};

struct RunResult {
  bool ok = false;
  bool reused = false;
  std::string error;
  eval::MetricsRecord metrics;
  std::optional<latent::NormalizedW2> w2;
};

namespace detail {

inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

inline json num(double v) { return fmt_double(v); }

inline double num(const json& j) {
  const std::string s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return std::strtod(s.c_str(), nullptr);
}

inline json metrics_to_json(const eval::MetricsRecord& r) {
  json sets = json::array();
  for (const auto& s : r.sets) {
    sets.push_back({{"name", s.name}, {"severity", num(s.severity)}, {"ahMSE", num(s.ah_mse)},
                    {"rMSE", num(s.rmse)}, {"AP", num(s.ap)}, {"Dice", num(s.dice)}});
  }
  return {{"hhMSE", num(r.hh_mse)}, {"SSIM", num(r.ssim)}, {"sets", sets}, {"AUC", num(r.auc)}};
}

inline eval::MetricsRecord metrics_from_json(const json& j) {
  eval::MetricsRecord r;
  r.hh_mse = num(j.at("hhMSE"));
  r.ssim = num(j.at("SSIM"));
  r.auc = num(j.at("AUC"));
  for (const auto& s : j.at("sets")) {
    eval::SetMetrics m;
    m.name = s.at("name").get<std::string>();
    m.severity = num(s.at("severity"));
    m.ah_mse = num(s.at("ahMSE"));
    m.rmse = num(s.at("rMSE"));
    m.ap = num(s.at("AP"));
    m.dice = num(s.at("Dice"));
    r.sets.push_back(std::move(m));
  }
  return r;
}

inline json w2_to_json(const latent::NormalizedW2& w) {
  return {{"ratio", num(w.ratio)}, {"numerator", num(w.numerator)}, {"denominator", num(w.denominator)},
          {"degenerate", w.degenerate}};
}

inline latent::NormalizedW2 w2_from_json(const json& j) {
  return {num(j.at("ratio")), num(j.at("numerator")), num(j.at("denominator")), j.at("degenerate").get<bool>()};
}

inline void write_latent_csv(const fs::path& path, const latent::Matrix& codes, const std::vector<std::string>& ids) {
  std::ostringstream os;
  os << "id";
  for (Eigen::Index c = 0; c < codes.cols(); ++c) os << ",z" << c;
  os << '\n';
  for (Eigen::Index r = 0; r < codes.rows(); ++r) {
    os << ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < codes.cols(); ++c) os << ',' << fmt_double(codes(r, c));
    os << '\n';
  }
  write_text_file(path.string(), os.str());
}

inline std::vector<std::string> ids_of(std::span<const phantom::ImageRecord* const> recs) {
  std::vector<std::string> ids;
  for (const auto* r : recs) ids.push_back(r->id);
  return ids;
}

// Everything a finished run depends on; a stored run is reused only when
// this matches exactly.
inline json run_fingerprint(const RunSpec& run, const phantom::StandardDatasets& data, const RunOptions& opt) {
  json j = {{"train", training::to_json(run.config)},
            {"dataset", phantom::manifest_header(data.spec, data.seed)},
            {"latents", opt.latents}};
  if (opt.latents) {
    j["study_severity"] = fmt_double(opt.study_severity);
    j["diagonal_w2"] = opt.diagonal_w2;
  }
  return j;
}

inline std::optional<RunResult> try_reuse(const fs::path& dir, const json& fingerprint) {
  try {
    if (!fs::exists(dir / "status.json") || !fs::exists(dir / "config.json")) return std::nullopt;
    const json status = read_json_file((dir / "status.json").string());
    if (status.value("status", "") != "ok") return std::nullopt;
    if (read_json_file((dir / "config.json").string()) != fingerprint) return std::nullopt;
    const json m = read_json_file((dir / "metrics.json").string());
    RunResult r;
    r.ok = true;
    r.reused = true;
    r.metrics = metrics_from_json(m.at("metrics"));
    if (m.contains("w2")) r.w2 = w2_from_json(m.at("w2"));
    return r;
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable leftovers are simply retrained
  }
}

}  // namespace detail

inline eval::Reconstructor model_reconstructor(const vae::ModelParams& params) {
  return [&params](const Tensor& x) { return vae::reconstruct(x, params); };
}

// Trains, evaluates and persists one run. Failures (non-finite loss, degenerate
// metrics) are captured in the result and in status.json, never thrown.
inline RunResult execute_run(const RunSpec& run, const phantom::StandardDatasets& data, const fs::path& dir,
                             const RunOptions& opt) {
  const json fingerprint = detail::run_fingerprint(run, data, opt);
  if (!opt.force) {
    if (auto reused = detail::try_reuse(dir, fingerprint)) return *reused;
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_json_file((dir / "config.json").string(), fingerprint);
  RunResult result;
  try {
    auto [train_set, val_set] = data.fold_split(run.config.fold);
    const training::TrainResult tr = training::train(run.config, train_set, val_set);
    write_text_file((dir / "history.csv").string(), training::history_csv(tr.history));
    training::save_checkpoint(dir / "checkpoint", tr.params, tr.schedule, tr.steps);

    result.metrics = eval::evaluate_model(model_reconstructor(tr.params), data, val_set);
    result.metrics.seed = run.config.seed;
    result.metrics.fold = run.config.fold;
    result.metrics.model_id = run.cell;
    json metrics = {{"metrics", detail::metrics_to_json(result.metrics)}};

    if (opt.latents) {
      const auto& study = data.simulated_set(phantom::simulated_set_name(opt.study_severity));
      std::vector<const Tensor*> ad_imgs, cn_imgs;
      std::vector<std::string> ad_ids;
      for (const auto& p : study.pairs) {
        ad_imgs.push_back(&p.x_prime);
        ad_ids.push_back(p.id);
      }
      std::vector<const phantom::ImageRecord*> cn_recs;
      for (const auto& r : data.test_cn) cn_recs.push_back(&r);
      const auto z_train = latent::collect_latents(tr.params, train_set);
      const auto z_val = latent::collect_latents(tr.params, val_set);
      const auto z_cn = latent::collect_latents(tr.params, cn_recs);
      const auto z_ad = latent::collect_latents(tr.params, std::span<const Tensor* const>(ad_imgs));
      fs::create_directories(dir / "latents");
      detail::write_latent_csv(dir / "latents" / "train.csv", z_train, detail::ids_of(train_set));
      detail::write_latent_csv(dir / "latents" / "val.csv", z_val, detail::ids_of(val_set));
      detail::write_latent_csv(dir / "latents" / "test-CN.csv", z_cn, detail::ids_of(cn_recs));
      detail::write_latent_csv(dir / "latents" / (study.name + ".csv"), z_ad, ad_ids);
      result.w2 = latent::normalized_w2(z_ad, z_cn, z_train, z_val, opt.diagonal_w2);
      metrics["w2"] = detail::w2_to_json(*result.w2);
    }
    write_json_file((dir / "metrics.json").string(), metrics);
    result.ok = true;
    write_json_file((dir / "status.json").string(), {{"status", "ok"}});
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
    write_json_file((dir / "status.json").string(), {{"status", "failed"}, {"error", result.error}});
  }
  return result;
}

// Runs every spec (up to opt.jobs at a time); results come back in input
// order regardless of scheduling. Also rewrites <out>/run_index.csv.
inline std::vector<RunResult> run_all(const std::vector<RunSpec>& runs, const phantom::StandardDatasets& data,
                                      const fs::path& out, const RunOptions& opt,
                                      const std::function<void(const std::string&)>& log = {}) {
  std::vector<RunResult> results(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const fs::path dir = out / "runs" / runs[i].dir;
      results[i] = execute_run(runs[i], data, dir, opt);
      if (log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        const auto& r = results[i];
        log(runs[i].dir + ": " + (r.ok ? (r.reused ? "up to date" : "done") : "FAILED: " + r.error));
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(opt.jobs, runs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  CsvTable index{{"cell", "seed", "fold", "run_dir", "checkpoint", "status"}, {}};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string rel = "runs/" + runs[i].dir;
    index.rows.push_back({runs[i].cell, std::to_string(runs[i].config.seed), std::to_string(runs[i].config.fold),
                          rel, rel + "/checkpoint", results[i].ok ? "ok" : "failed"});
  }
  fs::create_directories(out);
  write_csv((out / "run_index.csv").string(), index);
  return results;
}

// ---------------------------------------------------------------------------
// Aggregation helpers

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    s += x;
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

// Sample standard deviation (n - 1); NaN entries skipped; 0 for one value.
inline double std_of(std::span<const double> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    ss += (x - m) * (x - m);
    ++n;
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
}

struct ExperimentOutcome {
  std::size_t n_runs = 0;
  std::size_t n_failed = 0;
  std::vector<std::string> failures;
  std::vector<std::string> files;  // written outputs, relative to out
  json summary;
};

namespace detail {

inline void record_failures(ExperimentOutcome& o, const std::vector<RunSpec>& runs, const std::vector<RunResult>& res) {
  o.n_runs = runs.size();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!res[i].ok) {
      ++o.n_failed;
      o.failures.push_back(runs[i].dir + ": " + res[i].error);
    }
  }
}

inline void write_output(ExperimentOutcome& o, const fs::path& out, const std::string& name, const std::string& text) {
  write_text_file((out / name).string(), text);
  o.files.push_back(name);
}

inline std::string failures_text(const ExperimentOutcome& o) {
  std::string s = "failed runs: " + std::to_string(o.n_failed) + " of " + std::to_string(o.n_runs) + "\n";
  for (const auto& f : o.failures) s += "  " + f + "\n";
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sweep

inline std::vector<RunSpec> sweep_runs(const ExperimentSpec& spec) {
  std::vector<RunSpec> runs;
  for (double beta : spec.betas) {
    for (std::size_t d : spec.latent_dims) {
      for (std::uint64_t seed : spec.seeds()) {
        RunSpec r;
        r.cell = "beta" + fmt_double(beta) + "_d" + std::to_string(d);
        r.config = spec.base;
        r.config.arch.latent_dim = d;
        r.config.arch.posterior = vae::PosteriorKind::diagonal_gaussian;
        r.config.schedule = vae::BetaSchedule::constant(beta);
        r.config.seed = seed;
        r.beta = beta;
        r.latent_dim = d;
        r.dir = "sweep/" + detail::sanitize(r.cell) + "/seed" + std::to_string(seed) + "_fold" +
                std::to_string(r.config.fold);
        runs.push_back(std::move(r));
      }
    }
  }
  return runs;
}

struct CellSummary {
  double beta = 0.0;
  std::size_t latent_dim = 0;
  std::vector<double> mean;  // per metric column
  std::vector<double> std;
  std::size_t n_ok = 0;
};

inline std::vector<CellSummary> summarize_cells(const std::vector<RunSpec>& runs, const std::vector<RunResult>& res,
                                                std::size_t n_metrics) {
  std::vector<CellSummary> cells;
  for (std::size_t i = 0; i < runs.size();) {
    std::size_t j = i;
    while (j < runs.size() && runs[j].cell == runs[i].cell) ++j;
    CellSummary c;
    c.beta = runs[i].beta;
    c.latent_dim = runs[i].latent_dim;
    std::vector<std::vector<double>> cols(n_metrics);
    for (std::size_t k = i; k < j; ++k) {
      if (!res[k].ok) continue;
      ++c.n_ok;
      const auto v = metric_values(res[k].metrics);
      for (std::size_t m = 0; m < n_metrics && m < v.size(); ++m) cols[m].push_back(v[m]);
    }
    for (const auto& col : cols) {
      c.mean.push_back(mean_of(col));
      c.std.push_back(std_of(col));
    }
    cells.push_back(std::move(c));
    i = j;
  }
  return cells;
}

inline svg::ScatterPlot tradeoff_plot(const std::vector<CellSummary>& cells, const std::vector<std::string>& cols,
                                      const std::string& y_col, const std::string& y_label) {
  svg::ScatterPlot plot;
  plot.title = "Reconstruction vs detection trade-off";
  plot.x_label = "hhMSE (test-CN)";
  plot.y_label = y_label;
  plot.notes.push_back("one marker per (beta, d); bars show std over seeds");
  const std::size_t xi = 0;
  const std::size_t yi = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), y_col) - cols.begin());
  std::map<std::size_t, svg::Series> by_d;
  for (const auto& c : cells) {
    if (c.n_ok == 0) continue;
    auto& s = by_d[c.latent_dim];
    s.name = "d = " + std::to_string(c.latent_dim);
    s.points.push_back({c.mean[xi], c.mean[yi], c.std[xi], c.std[yi], "b=" + fmt_double(c.beta)});
  }
  for (auto& [d, s] : by_d) plot.series.push_back(std::move(s));
  return plot;
}

inline std::vector<double> severities_of(const phantom::StandardDatasets& data) {
  std::vector<double> s;
  for (const auto& set : data.simulated) s.push_back(set.severity);
  return s;
}

inline std::string first_suffix(const std::vector<double>& severities) {
  return std::to_string(static_cast<int>(std::lround(severities.front() * 100.0)));
}

inline ExperimentOutcome run_sweep(const ExperimentSpec& spec, const phantom::StandardDatasets& data,
                                   const fs::path& out, const RunOptions& opt,
                                   const std::function<void(const std::string&)>& log = {}) {
  const auto runs = sweep_runs(spec);
  const auto res = run_all(runs, data, out, opt, log);
  ExperimentOutcome o;
  detail::record_failures(o, runs, res);

  const auto sev = severities_of(data);
  const auto cols = metric_columns(sev);
  CsvTable t;
  t.header = {"beta", "d", "seed", "fold"};
  t.header.insert(t.header.end(), cols.begin(), cols.end());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!res[i].ok) continue;
    std::vector<std::string> row{fmt_double(runs[i].beta), std::to_string(runs[i].latent_dim),
                                 std::to_string(runs[i].config.seed), std::to_string(runs[i].config.fold)};
    for (double v : metric_values(res[i].metrics)) row.push_back(fmt_double(v));
    t.rows.push_back(std::move(row));
  }
  // Aggregate rows: seed column holds "mean" / "std", fold column "all".
  const auto cells = summarize_cells(runs, res, cols.size());
  for (const auto& c : cells) {
    for (int which = 0; which < 2; ++which) {
      std::vector<std::string> row{fmt_double(c.beta), std::to_string(c.latent_dim), which ? "std" : "mean", "all"};
      for (double v : which ? c.std : c.mean) row.push_back(fmt_double(v));
      t.rows.push_back(std::move(row));
    }
  }
  detail::write_output(o, out, "tradeoff.csv", t.to_string());
  const std::string k = first_suffix(sev);
  detail::write_output(o, out, "tradeoff_rmse.svg",
                       svg::render(tradeoff_plot(cells, cols, "rMSE" + k, "rMSE (test-AD-" + k + ")")));
  detail::write_output(o, out, "tradeoff_ap.svg",
                       svg::render(tradeoff_plot(cells, cols, "AP" + k, "AP (test-AD-" + k + ")")));

  // Trend statistics over the cell means.
  std::vector<double> hh, rm;
  json per_d = json::object();
  for (const auto& c : cells) {
    if (c.n_ok == 0) continue;
    hh.push_back(c.mean[0]);
    rm.push_back(c.mean[static_cast<std::size_t>(std::find(cols.begin(), cols.end(), "rMSE" + k) - cols.begin())]);
  }
  o.summary["cells"] = cells.size();
  o.summary["failed_runs"] = o.n_failed;
  try {
    o.summary["spearman_hhMSE_rMSE"] = latent::spearman(hh, rm);
  } catch (const Error& e) {
    o.summary["spearman_hhMSE_rMSE"] = nullptr;
    o.summary["spearman_error"] = e.what();
  }
  // hhMSE non-decreasing in beta at each d (betas in ascending order).
  std::size_t monotone = 0;
  for (std::size_t d : spec.latent_dims) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& c : cells) {
      if (c.latent_dim == d && c.n_ok > 0) pts.emplace_back(c.beta, c.mean[0]);
    }
    std::sort(pts.begin(), pts.end());
    bool ok = !pts.empty();
    for (std::size_t i = 1; i < pts.size(); ++i) ok = ok && pts[i].second >= pts[i - 1].second;
    per_d[std::to_string(d)] = ok;
    monotone += ok;
  }
  o.summary["hhMSE_nondecreasing_in_beta"] = per_d;
  o.summary["n_d_nondecreasing"] = monotone;

  std::ostringstream txt;
  txt << "sweep: " << runs.size() << " runs, " << cells.size() << " cells\n";
  txt << "spearman(hhMSE, rMSE" << k << ") over cell means: "
      << (o.summary["spearman_hhMSE_rMSE"].is_null() ? std::string("n/a")
                                                      : fmt_fixed(o.summary["spearman_hhMSE_rMSE"].get<double>(), 4))
      << "\n";
  txt << "hhMSE non-decreasing in beta for " << monotone << " of " << spec.latent_dims.size() << " latent dims\n";
  txt << detail::failures_text(o);
  detail::write_output(o, out, "summary.txt", txt.str());
  return o;
}

// ---------------------------------------------------------------------------
// Seed study

inline std::vector<RunSpec> seed_study_runs(const ExperimentSpec& spec) {
  std::vector<RunSpec> runs;
  const std::string cell = vae::to_string(spec.base.arch.posterior) + std::string("_") +
                           vae::to_string(spec.base.schedule.kind) + fmt_double(spec.base.schedule.beta_max) + "_d" +
                           std::to_string(spec.base.arch.latent_dim);
  for (std::uint64_t seed : spec.seeds()) {
    RunSpec r;
    r.cell = cell;
    r.config = spec.base;
    r.config.seed = seed;
    r.beta = spec.base.schedule.beta_max;
    r.latent_dim = spec.base.arch.latent_dim;
    r.dir = "seed-study/" + detail::sanitize(cell) + "/seed" + std::to_string(seed) + "_fold" +
            std::to_string(r.config.fold);
    runs.push_back(std::move(r));
  }
  return runs;
}

struct SeedStudyRow {
  std::uint64_t seed = 0;
  bool ok = false;
  eval::MetricsRecord metrics;
  latent::NormalizedW2 w2;
};

inline ExperimentOutcome run_seed_study(const ExperimentSpec& spec, const phantom::StandardDatasets& data,
                                        const fs::path& out, RunOptions opt,
                                        const std::function<void(const std::string&)>& log = {},
                                        std::vector<SeedStudyRow>* rows_out = nullptr) {
  opt.latents = true;
  opt.study_severity = spec.study_severity;
  opt.diagonal_w2 = spec.diagonal_w2;
  const auto runs = seed_study_runs(spec);
  const auto res = run_all(runs, data, out, opt, log);
  ExperimentOutcome o;
  detail::record_failures(o, runs, res);

  const auto sev = severities_of(data);
  const auto cols = metric_columns(sev);
  const std::string k = std::to_string(static_cast<int>(std::lround(spec.study_severity * 100.0)));
  const std::size_t r_col = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), "rMSE" + k) - cols.begin());
  if (r_col >= cols.size()) throw ConfigError("seed study severity " + k + "% has no simulated set");

  CsvTable t;
  t.header = {"seed", "fold"};
  t.header.insert(t.header.end(), cols.begin(), cols.end());
  for (const char* c : {"W2_AD_CN", "W2_train_val", "normW2", "w2_degenerate"}) t.header.push_back(c);
  std::vector<double> xs, ys;
  std::map<std::string, std::vector<double>> per_metric;
  std::vector<SeedStudyRow> rows;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    SeedStudyRow row{runs[i].config.seed, res[i].ok, res[i].metrics, res[i].w2.value_or(latent::NormalizedW2{})};
    rows.push_back(row);
    if (!res[i].ok) continue;
    std::vector<std::string> cells{std::to_string(runs[i].config.seed), std::to_string(runs[i].config.fold)};
    const auto v = metric_values(res[i].metrics);
    for (std::size_t m = 0; m < v.size(); ++m) {
      cells.push_back(fmt_double(v[m]));
      per_metric[cols[m]].push_back(v[m]);
    }
    const auto& w = *res[i].w2;
    cells.push_back(fmt_double(w.numerator));
    cells.push_back(fmt_double(w.denominator));
    cells.push_back(fmt_double(w.ratio));
    cells.push_back(w.degenerate ? "1" : "0");
    t.rows.push_back(std::move(cells));
    if (w.degenerate) {
      ++excluded;
      continue;
    }
    xs.push_back(w.ratio);
    ys.push_back(v[r_col]);
  }
  if (rows_out) *rows_out = rows;
  detail::write_output(o, out, "seed_study.csv", t.to_string());

  std::optional<double> r;
  std::string r_error;
  try {
    r = latent::pearson(xs, ys);
  } catch (const Error& e) {
    r_error = e.what();
  }
  o.summary["n_seeds"] = runs.size();
  o.summary["failed_runs"] = o.n_failed;
  o.summary["degenerate_w2_excluded"] = excluded;
  o.summary["pearson_rMSE_normW2"] = r ? json(*r) : json(nullptr);
  if (!r_error.empty()) o.summary["pearson_error"] = r_error;
  json stds = json::object();
  for (const auto& c : cols) stds[c] = std_of(per_metric[c]);
  o.summary["std_across_seeds"] = stds;
  json means = json::object();
  for (const auto& c : cols) means[c] = mean_of(per_metric[c]);
  o.summary["mean_across_seeds"] = means;
  detail::write_output(o, out, "seed_study_summary.json", o.summary.dump(2) + "\n");

  svg::ScatterPlot plot;
  plot.title = "Reconstruction healthiness vs latent distance";
  plot.x_label = "normalized W2 (test-AD-" + k + " vs test-CN) / (train vs val)";
  plot.y_label = "rMSE (test-AD-" + k + ")";
  svg::Series s;
  s.name = "seeds";
  for (std::size_t i = 0; i < xs.size(); ++i) s.points.push_back({xs[i], ys[i], 0, 0, ""});
  plot.series.push_back(std::move(s));
  if (!xs.empty()) {
    // Marginal summaries in place of marginal histograms.
    svg::Series m;
    m.name = "mean +/- std";
    m.points.push_back({mean_of(xs), mean_of(ys), std_of(xs), std_of(ys), ""});
    plot.series.push_back(std::move(m));
  }
  plot.notes.push_back("Pearson r = " + (r ? fmt_fixed(*r, 3) : std::string("n/a")) + ", n = " +
                       std::to_string(xs.size()));
  detail::write_output(o, out, "seed_study.svg", svg::render(plot));

  std::ostringstream txt;
  txt << "seed study: " << runs.size() << " seeds, config " << runs.front().cell << "\n";
  txt << "pearson(rMSE" << k << ", normW2) = " << (r ? fmt_fixed(*r, 4) : "n/a (" + r_error + ")") << "\n";
  for (const char* m : {"AP", "Dice", "rMSE"}) {
    for (double sv : sev) {
      const std::string c = m + std::to_string(static_cast<int>(std::lround(sv * 100.0)));
      txt << "std across seeds of " << c << ": " << fmt_fixed(std_of(per_metric[c]), 5) << "\n";
    }
  }
  if (excluded) txt << "excluded (degenerate W2 denominator): " << excluded << "\n";
  txt << detail::failures_text(o);
  detail::write_output(o, out, "summary.txt", txt.str());
  return o;
}

// ---------------------------------------------------------------------------
// Compare

inline std::vector<RunSpec> compare_runs(const ExperimentSpec& spec, std::size_t n_folds) {
  std::vector<std::pair<std::size_t, std::uint64_t>> combos;  // (fold, seed)
  const auto seeds = spec.seeds();
  if (spec.pairing == Pairing::paired) {
    for (std::size_t i = 0; i < seeds.size(); ++i) combos.emplace_back(i % n_folds, seeds[i]);
  } else {
    for (std::size_t f = 0; f < n_folds; ++f) {
      for (auto s : seeds) combos.emplace_back(f, s);
    }
  }
  std::vector<RunSpec> runs;
  for (const auto& m : spec.methods) {
    for (const auto& [fold, seed] : combos) {
      RunSpec r;
      r.cell = m.name;
      r.config = spec.base;
      r.config.arch.posterior = m.posterior;
      r.config.schedule = m.schedule;
      r.config.seed = seed;
      r.config.fold = fold;
      r.beta = m.schedule.beta_max;
      r.latent_dim = spec.base.arch.latent_dim;
      r.dir = "compare/" + detail::sanitize(m.name) + "/seed" + std::to_string(seed) + "_fold" + std::to_string(fold);
      runs.push_back(std::move(r));
    }
  }
  return runs;
}

inline ExperimentOutcome run_compare(const ExperimentSpec& spec, const phantom::StandardDatasets& data,
                                     const fs::path& out, const RunOptions& opt,
                                     const std::function<void(const std::string&)>& log = {}) {
  const auto runs = compare_runs(spec, data.splits.k());
  const auto res = run_all(runs, data, out, opt, log);
  ExperimentOutcome o;
  detail::record_failures(o, runs, res);
  const auto sev = severities_of(data);
  const auto cols = metric_columns(sev);

  CsvTable per_run;
  per_run.header = {"method", "seed", "fold"};
  per_run.header.insert(per_run.header.end(), cols.begin(), cols.end());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!res[i].ok) continue;
    std::vector<std::string> row{runs[i].cell, std::to_string(runs[i].config.seed),
                                 std::to_string(runs[i].config.fold)};
    for (double v : metric_values(res[i].metrics)) row.push_back(fmt_double(v));
    per_run.rows.push_back(std::move(row));
  }
  detail::write_output(o, out, "compare_runs.csv", per_run.to_string());

  // Per-method mean / std over its (fold, seed) runs; rMSE averaged per run.
  const auto cells = summarize_cells(runs, res, cols.size());
  CsvTable table;
  table.header = {"method", "n"};
  for (const auto& c : cols) {
    table.header.push_back(c + "_mean");
    table.header.push_back(c + "_std");
  }
  std::ostringstream txt;
  txt << "method";
  for (const auto& c : cols) txt << "  " << c;
  txt << "\n";
  json methods = json::object();
  for (std::size_t m = 0; m < cells.size(); ++m) {
    const auto& cell = cells[m];
    const std::string& name = spec.methods[m].name;
    std::vector<std::string> row{name, std::to_string(cell.n_ok)};
    txt << name;
    json mj = json::object();
    for (std::size_t c = 0; c < cols.size(); ++c) {
      row.push_back(fmt_double(cell.mean[c]));
      row.push_back(fmt_double(cell.std[c]));
      txt << "  " << fmt_fixed(cell.mean[c], 5) << " +/- " << fmt_fixed(cell.std[c], 5);
      mj[cols[c]] = {{"mean", cell.mean[c]}, {"std", cell.std[c]}};
    }
    txt << "\n";
    table.rows.push_back(std::move(row));
    methods[name] = mj;
  }
  txt << detail::failures_text(o);
  detail::write_output(o, out, "compare.csv", table.to_string());
  detail::write_output(o, out, "compare.txt", txt.str());

  const std::string k = first_suffix(sev);
  const std::size_t yi = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), "rMSE" + k) - cols.begin());
  svg::ScatterPlot plot;
  plot.title = "Methods: reconstruction vs healthiness";
  plot.x_label = "hhMSE (test-CN)";
  plot.y_label = "rMSE (test-AD-" + k + ")";
  plot.notes.push_back("mean +/- std over folds and seeds");
  for (std::size_t m = 0; m < cells.size(); ++m) {
    if (cells[m].n_ok == 0) continue;
    plot.series.push_back(
        {spec.methods[m].name, {{cells[m].mean[0], cells[m].mean[yi], cells[m].std[0], cells[m].std[yi], ""}}});
  }
  detail::write_output(o, out, "compare.svg", svg::render(plot));
  o.summary["methods"] = methods;
  o.summary["failed_runs"] = o.n_failed;
  return o;
}

// ---------------------------------------------------------------------------
// Plot from CSV

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds{"tradeoff-rmse", "tradeoff-ap", "seed-study", "compare"};
  return kinds;
}

// Renders an SVG from a CSV written by one of the experiments.
inline std::string plot_csv(const CsvTable& t, const std::string& kind) {
  auto fin = [](double v) { return std::isfinite(v); };
  svg::ScatterPlot plot;
  if (kind == "tradeoff-rmse" || kind == "tradeoff-ap") {
    const bool ap = kind == "tradeoff-ap";
    std::string y_col;
    for (const auto& h : t.header) {
      if (h.rfind(ap ? "AP" : "rMSE", 0) == 0) {
        y_col = h;
        break;
      }
    }
    t.require_columns({"beta", "d", "seed", "hhMSE", y_col.empty() ? (ap ? "AP30" : "rMSE30") : y_col});
    plot.title = "Reconstruction vs detection trade-off";
    plot.x_label = "hhMSE (test-CN)";
    plot.y_label = y_col;
    std::map<long, svg::Series> by_d;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& seed = t.rows[r][t.column("seed")];
      if (seed == "mean" || seed == "std") continue;
      const long d = std::lround(t.number(r, "d"));
      auto& s = by_d[d];
      s.name = "d = " + std::to_string(d);
      const double x = t.number(r, "hhMSE"), y = t.number(r, y_col);
      if (fin(x) && fin(y)) s.points.push_back({x, y, 0, 0, ""});
    }
    for (auto& [d, s] : by_d) plot.series.push_back(std::move(s));
  } else if (kind == "seed-study") {
    std::string y_col;
    for (const auto& h : t.header) {
      if (h.rfind("rMSE", 0) == 0) {
        y_col = h;
        break;
      }
    }
    t.require_columns({"seed", "normW2", y_col.empty() ? "rMSE30" : y_col});
    plot.title = "Reconstruction healthiness vs latent distance";
    plot.x_label = "normalized W2";
    plot.y_label = y_col;
    svg::Series s{"seeds", {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.has_column("w2_degenerate") && t.rows[r][t.column("w2_degenerate")] == "1") continue;
      s.points.push_back({t.number(r, "normW2"), t.number(r, y_col), 0, 0, ""});
    }
    plot.series.push_back(std::move(s));
  } else if (kind == "compare") {
    std::string y_col;
    for (const auto& h : t.header) {
      if (h.rfind("rMSE", 0) == 0 && h.size() > 5 && h.substr(h.size() - 5) == "_mean") {
        y_col = h.substr(0, h.size() - 5);
        break;
      }
    }
    const std::string y = y_col.empty() ? "rMSE30" : y_col;
    t.require_columns({"method", "hhMSE_mean", "hhMSE_std", y + "_mean", y + "_std"});
    plot.title = "Methods: reconstruction vs healthiness";
    plot.x_label = "hhMSE (test-CN)";
    plot.y_label = y;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      plot.series.push_back({t.rows[r][t.column("method")],
                             {{t.number(r, "hhMSE_mean"), t.number(r, y + "_mean"), t.number(r, "hhMSE_std"),
                               t.number(r, y + "_std"), ""}}});
    }
  } else {
    std::string known;
    for (const auto& k : plot_kinds()) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown plot kind '" + kind + "' (expected one of: " + known + ")");
  }
  return svg::render(plot);
}

}  // namespace uadlab::exp
