// uadlab: command-line driver for the reconstruction / detection study.
//
//   uadlab gen-data   --config data.json [--out DIR] [--force]
//   uadlab train      --config train.json --data DIR [--out DIR] [--force]
//   uadlab sweep      --config sweep.json [--data DIR] [--out DIR] [--seeds N] [--jobs N] [--force]
//   uadlab seed-study --config study.json [--data DIR] [--out DIR] [--seeds N] [--jobs N] [--force]
//   uadlab compare    --config compare.json [--data DIR] [--out DIR] [--seeds N] [--jobs N] [--force]
//   uadlab plot       --csv FILE --kind KIND [--out FILE]
//
// Exit codes: 0 ok, 1 usage or config error, 2 some runs failed, 3 data error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <uadlab/dataset_io.hpp>
#include <uadlab/experiments.hpp>

namespace fs = std::filesystem;
using namespace uadlab;

namespace {

enum Exit { kOk = 0, kUsage = 1, kPartial = 2, kData = 3 };

fs::path default_root() {
  const char* env = std::getenv("UADLAB_OUT");
  return (env && *env) ? fs::path(env) : fs::path("uadlab_out");
}

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string csv;
  std::string kind;
  std::size_t seeds = 0;  // 0 keeps the config's n_seeds
  std::size_t jobs = 1;
  bool force = false;
};

fs::path out_or(const Options& o, const std::string& sub) {
  return o.out.empty() ? default_root() / sub : fs::path(o.out);
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_gen_data(const Options& o) {
  const auto cfg = phantom::gen_data_config_from_json(read_json_file(o.config));
  const fs::path out = out_or(o, "data");
  const json header = phantom::manifest_header(cfg.spec, cfg.seed);
  if (fs::exists(out / "manifest.json") && !o.force) {
    const json m = phantom::read_manifest(out);  // DataError if corrupt
    bool same = true;
    for (const auto& [key, value] : header.items()) same = same && m.contains(key) && m.at(key) == value;
    if (same) {
      std::cout << "dataset at " << out.string() << " is up to date\n";
      return kOk;
    }
    throw ConfigError("dataset at " + out.string() +
                      " was generated from a different config or seed; use --force to overwrite");
  }
  if (o.force && fs::exists(out)) {
    fs::remove_all(out / "tensors");
    fs::remove(out / "manifest.json");
  }
  const auto ds = phantom::build_standard_datasets(cfg.spec, cfg.seed);
  phantom::write_dataset(ds, out);
  std::cout << "wrote dataset to " << out.string() << ": " << ds.train.size() << " train, " << ds.test_cn.size()
            << " test-CN";
  for (const auto& s : ds.simulated) std::cout << ", " << s.pairs.size() << ' ' << s.name;
  std::cout << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  if (o.data.empty()) throw ConfigError("train needs --data DIR");
  const auto config = training::train_config_from_json(read_json_file(o.config));
  const auto data = phantom::read_dataset(o.data);
  exp::RunSpec run;
  run.cell = "train";
  run.config = config;
  const fs::path out = out_or(o, "train");
  exp::RunOptions opt;
  opt.force = o.force;
  const auto res = exp::execute_run(run, data, out, opt);
  if (!res.ok) {
    std::cerr << "training failed: " << res.error << '\n';
    return kPartial;
  }
  std::cout << (res.reused ? "up to date: " : "trained: ") << out.string() << "\n";
  const auto& m = res.metrics;
  std::cout << "hhMSE " << fmt_fixed(m.hh_mse, 6) << "  SSIM " << fmt_fixed(m.ssim, 4);
  for (const auto& s : m.sets) {
    std::cout << "  " << s.name << ": rMSE " << fmt_fixed(s.rmse, 4) << " AP " << fmt_fixed(s.ap, 4);
  }
  std::cout << "  AUC " << fmt_fixed(m.auc, 4) << '\n';
  return kOk;
}

int cmd_experiment(const Options& o, exp::ExperimentKind kind) {
  json j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError(o.config + ": expected a JSON object");
  if (!j.contains("kind")) j["kind"] = exp::to_string(kind);
  auto spec = exp::experiment_spec_from_json(j);
  if (spec.kind != kind) {
    throw ConfigError(o.config + " describes a " + exp::to_string(spec.kind) + " experiment, not " +
                      exp::to_string(kind));
  }
  if (o.seeds) spec.n_seeds = o.seeds;
  if (!o.data.empty()) {
    spec.data = {o.data, std::nullopt};
  } else if (spec.data.dir.empty() && !spec.data.inline_spec) {
    spec.data.dir = (default_root() / "data").string();
  }
  spec.validate();
  const auto data = exp::load_data(spec.data);
  const fs::path out = out_or(o, exp::to_string(kind));
  fs::create_directories(out);
  exp::RunOptions opt;
  opt.jobs = o.jobs;
  opt.force = o.force;

  exp::ExperimentOutcome outcome;
  switch (kind) {
    case exp::ExperimentKind::sweep: outcome = exp::run_sweep(spec, data, out, opt, log_line); break;
    case exp::ExperimentKind::seed_study: outcome = exp::run_seed_study(spec, data, out, opt, log_line); break;
    case exp::ExperimentKind::compare: outcome = exp::run_compare(spec, data, out, opt, log_line); break;
  }
  for (const auto& f : outcome.files) std::cout << "wrote " << (out / f).string() << '\n';
  if (fs::exists(out / "summary.txt")) std::cout << read_text_file((out / "summary.txt").string());
  if (kind == exp::ExperimentKind::compare) std::cout << read_text_file((out / "compare.txt").string());
  if (outcome.n_failed > 0) {
    std::cerr << outcome.n_failed << " of " << outcome.n_runs << " runs failed\n";
    return kPartial;
  }
  return kOk;
}

int cmd_plot(const Options& o) {
  if (o.csv.empty() || o.kind.empty()) throw ConfigError("plot needs --csv FILE and --kind KIND");
  const auto table = read_csv(o.csv);
  const std::string svg = exp::plot_csv(table, o.kind);
  const fs::path out = o.out.empty() ? fs::path(o.csv).replace_extension(".svg") : fs::path(o.out);
  write_text_file(out.string(), svg);
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uadlab: VAE reconstruction vs anomaly detection study"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "generate the phantom datasets");
  gen->add_option("--config", o.config, "data config JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "dataset directory (default $UADLAB_OUT/data)");
  gen->add_flag("--force", o.force, "overwrite a dataset generated from a different config");

  auto* train = app.add_subcommand("train", "train and evaluate a single model");
  train->add_option("--config", o.config, "train config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--data", o.data, "dataset directory")->required();
  train->add_option("--out", o.out, "run directory (default $UADLAB_OUT/train)");
  train->add_flag("--force", o.force, "retrain even if the run is up to date");

  std::vector<std::pair<CLI::App*, exp::ExperimentKind>> experiments;
  for (auto [name, kind, help] :
       {std::tuple{"sweep", exp::ExperimentKind::sweep, "beta x latent-dim trade-off sweep"},
        std::tuple{"seed-study", exp::ExperimentKind::seed_study, "rMSE vs normalized W2 across seeds"},
        std::tuple{"compare", exp::ExperimentKind::compare, "method comparison table"}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "experiment config JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, std::string("output directory (default $UADLAB_OUT/") + name + ")");
    sub->add_option("--data", o.data, "dataset directory (default: config's, else $UADLAB_OUT/data)");
    sub->add_option("--seeds", o.seeds, "number of seeds (overrides n_seeds)")->check(CLI::PositiveNumber);
    sub->add_option("--jobs", o.jobs, "runs trained in parallel")->check(CLI::PositiveNumber);
    sub->add_flag("--force", o.force, "retrain runs that are already complete");
    experiments.emplace_back(sub, kind);
  }

  auto* plot = app.add_subcommand("plot", "render an SVG from an experiment CSV");
  plot->add_option("--csv", o.csv, "input CSV")->required()->check(CLI::ExistingFile);
  std::string kinds;
  for (const auto& k : exp::plot_kinds()) kinds += (kinds.empty() ? "" : ", ") + k;
  plot->add_option("--kind", o.kind, "plot kind: " + kinds)->required();
  plot->add_option("--out", o.out, "output SVG (default: CSV path with .svg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o);
    if (*plot) return cmd_plot(o);
    for (auto& [sub, kind] : experiments) {
      if (*sub) return cmd_experiment(o, kind);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
