#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "adam.hpp"
#include "autodiff.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "json_util.hpp"
#include "phantom.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "vae.hpp"

namespace uadlab::training {

using vae::ArchConfig;
using vae::BetaSchedule;
using vae::LossBreakdown;
using vae::ModelParams;

struct TrainConfig {
  ArchConfig arch;
  // total_steps is filled in by train() from epochs and the data size.
  BetaSchedule schedule = BetaSchedule::constant(1.0);
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t fold = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(schedule.beta_max >= 0.0)) throw ConfigError("schedule.beta_max must be >= 0");
    if (schedule.kind == vae::ScheduleKind::cyclical && schedule.n_cycles == 0) {
      throw ConfigError("schedule.n_cycles must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const ArchConfig& a) {
  return {{"input_dim", a.input_dim},
          {"hidden", a.hidden},
          {"latent_dim", a.latent_dim},
          {"activation", vae::to_string(a.activation)},
          {"posterior", vae::to_string(a.posterior)}};
}

inline ArchConfig arch_from_json(const json& j) {
  require_known_keys(j, {"input_dim", "hidden", "latent_dim", "activation", "posterior"}, "arch");
  ArchConfig a;
  read_opt(j, "input_dim", a.input_dim, "arch");
  read_opt(j, "hidden", a.hidden, "arch");
  read_opt(j, "latent_dim", a.latent_dim, "arch");
  std::string act = vae::to_string(a.activation), post = vae::to_string(a.posterior);
  read_opt(j, "activation", act, "arch");
  read_opt(j, "posterior", post, "arch");
  a.activation = vae::activation_from_string(act);
  a.posterior = vae::posterior_from_string(post);
  return a;
}

inline json to_json(const BetaSchedule& s, bool with_steps = false) {
  json j = {{"kind", vae::to_string(s.kind)}, {"beta_max", s.beta_max}, {"n_cycles", s.n_cycles}};
  if (with_steps) j["total_steps"] = s.total_steps;
  return j;
}

inline BetaSchedule schedule_from_json(const json& j, bool with_steps = false) {
  if (with_steps) {
    require_known_keys(j, {"kind", "beta_max", "n_cycles", "total_steps"}, "schedule");
  } else {
    require_known_keys(j, {"kind", "beta_max", "n_cycles"}, "schedule");
  }
  BetaSchedule s;
  std::string kind = vae::to_string(s.kind);
  read_opt(j, "kind", kind, "schedule");
  s.kind = vae::schedule_kind_from_string(kind);
  read_opt(j, "beta_max", s.beta_max, "schedule");
  read_opt(j, "n_cycles", s.n_cycles, "schedule");
  if (with_steps) read_opt(j, "total_steps", s.total_steps, "schedule");
  return s;
}

inline json to_json(const TrainConfig& c) {
  return {{"arch", to_json(c.arch)}, {"schedule", to_json(c.schedule)}, {"epochs", c.epochs},
          {"lr", c.lr}, {"batch_size", c.batch_size}, {"seed", c.seed}, {"fold", c.fold}};
}

inline TrainConfig train_config_from_json(const json& j) {
  require_known_keys(j, {"arch", "schedule", "epochs", "lr", "batch_size", "seed", "fold"}, "train config");
  TrainConfig c;
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  read_opt(j, "epochs", c.epochs, "train config");
  read_opt(j, "lr", c.lr, "train config");
  read_opt(j, "batch_size", c.batch_size, "train config");
  read_opt(j, "seed", c.seed, "train config");
  read_opt(j, "fold", c.fold, "train config");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Glorot-uniform weights, zero biases, log_alpha at its fixed initial value.
inline ModelParams init_params(const ArchConfig& arch, RandomStream& rng) {
  ModelParams p = ModelParams::zeros(arch);
  for (std::size_t i = 0; i < p.names.size(); ++i) {
    Tensor& t = p.tensors[i];
    if (t.rank() != 2) continue;
    const double a = glorot_bound(t.dim(0), t.dim(1));
    for (double& v : t.data()) v = rng.uniform(-a, a);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
  double beta_end = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> beta_trace;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  BetaSchedule schedule;  // with total_steps resolved
  std::uint64_t steps = 0;
};

namespace detail {

inline Tensor batch_matrix(std::span<const phantom::ImageRecord* const> images, std::span<const std::size_t> idx,
                           std::size_t width) {
  Tensor x(Shape{idx.size(), width});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Tensor& img = images[idx[r]]->image;
    if (img.size() != width) {
      throw ShapeError("image " + images[idx[r]]->id + " has " + std::to_string(img.size()) +
                       " pixels, model expects " + std::to_string(width));
    }
    std::copy(img.data().begin(), img.data().end(), x.row(r).begin());
  }
  return x;
}

inline void check_finite(const LossBreakdown& b, std::size_t epoch, std::size_t batch) {
  auto fail = [&](const char* term, double v) {
    throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch) + ": " + term + " = " + std::to_string(v));
  };
  if (!std::isfinite(b.recon_term)) fail("recon", b.recon_term);
  if (!std::isfinite(b.kl_term)) fail("kl", b.kl_term);
  if (!std::isfinite(b.total)) fail("total", b.total);
}

inline void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.total += w * b.total;
  acc.recon_term += w * b.recon_term;
  acc.kl_term += w * b.kl_term;
}

inline std::vector<const phantom::ImageRecord*> canonical_order(std::span<const phantom::ImageRecord* const> images) {
  std::vector<const phantom::ImageRecord*> out(images.begin(), images.end());
  std::stable_sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return out;
}

}  // namespace detail

// Deterministic-reconstruction loss: x_hat = D(mu(x)), KL at the encoder
// outputs. Used for validation curves.
inline LossBreakdown evaluate_loss(const ModelParams& params, std::span<const phantom::ImageRecord* const> images,
                                   double beta) {
  if (images.empty()) return {0.0, 0.0, 0.0, beta};
  std::vector<std::size_t> idx(images.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  diff::Tape tape;
  vae::ModelVars mv = vae::bind(tape, params, false);
  diff::Var x = tape.constant(detail::batch_matrix(images, idx, params.arch.input_dim));
  vae::Posterior post = vae::encode(x, mv);
  diff::Var x_hat = vae::decode(post.mu, mv);
  return vae::elbo_loss(x, x_hat, post, beta).values();
}

inline TrainResult train(TrainConfig config, std::span<const phantom::ImageRecord* const> train_images,
                         std::span<const phantom::ImageRecord* const> val_images) {
  config.validate();
  if (train_images.empty()) throw DataError("train: no training images");
  const std::size_t width = train_images.front()->image.size();
  if (config.arch.input_dim == 0) config.arch.input_dim = width;
  config.arch.validate();

  const auto images = detail::canonical_order(train_images);
  const auto val = detail::canonical_order(val_images);
  const std::size_t n = images.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  BetaSchedule schedule = config.schedule;
  schedule.total_steps = config.epochs * steps_per_epoch;
  schedule.validate();

  const SeededRng rng = seeded_rng(config.seed);
  RandomStream init_stream = rng.stream("init");
  RandomStream shuffle_stream = rng.stream("shuffle");
  RandomStream noise_stream = rng.stream("noise");

  TrainResult result;
  result.params = init_params(config.arch, init_stream);
  ModelParams& params = result.params;
  AdamState adam(AdamConfig{.lr = config.lr}, params.tensors);
  result.history.beta_trace.reserve(schedule.total_steps);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<Tensor> grads;
  std::uint64_t step = 0;
  const std::size_t d = config.arch.latent_dim;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), shuffle_stream);
    LossBreakdown epoch_sum;
    double beta = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(n, lo + config.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(lo, hi - lo);
      beta = vae::beta_at(schedule, step);
      result.history.beta_trace.push_back(beta);

      diff::Tape tape;
      vae::ModelVars mv = vae::bind(tape, params, true);
      diff::Var x = tape.constant(detail::batch_matrix(images, idx, width));
      Tensor eps(Shape{idx.size(), d});
      noise_stream.fill_normal(eps.data());
      vae::LossTerms loss = vae::model_loss(x, tape.constant(std::move(eps)), mv, beta);
      const LossBreakdown values = loss.values();
      detail::check_finite(values, epoch, b);
      detail::accumulate(epoch_sum, values, static_cast<double>(idx.size()));

      diff::Gradients g = diff::backward(tape, loss.total);
      grads.clear();
      for (std::size_t k = 0; k < mv.vars.size(); ++k) {
        const Tensor* gk = g.find(mv[k]);
        grads.push_back(gk ? *gk : Tensor(params.tensors[k].shape()));
      }
      adam_step(params.tensors, grads, adam);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.beta_end = beta;
    rec.train = epoch_sum;
    const double inv = 1.0 / static_cast<double>(n);
    rec.train.total *= inv;
    rec.train.recon_term *= inv;
    rec.train.kl_term *= inv;
    rec.train.beta_used = beta;
    rec.val = evaluate_loss(params, val, beta);
    result.history.epochs.push_back(rec);
  }
  result.schedule = schedule;
  result.steps = step;
  return result;
}

// epoch, train_total, train_recon, train_kl, val_total, val_recon, val_kl, beta_end_of_epoch
inline std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl,beta_end_of_epoch\n";
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << fmt_double(e.train.total) << ',' << fmt_double(e.train.recon_term) << ','
       << fmt_double(e.train.kl_term) << ',' << fmt_double(e.val.total) << ','
       << fmt_double(e.val.recon_term) << ',' << fmt_double(e.val.kl_term) << ','
       << fmt_double(e.beta_end) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/meta.json + <dir>/params/<name>.tnsr
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "uadlab-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class ArchMismatchError : public DataError {
 public:
  using DataError::DataError;
};

struct Checkpoint {
  ModelParams params;
  BetaSchedule schedule;
  std::uint64_t step = 0;
};

inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                            const BetaSchedule& schedule, std::uint64_t step) {
  params.validate();
  std::filesystem::create_directories(dir / "params");
  json files = json::array();
  for (std::size_t i = 0; i < params.names.size(); ++i) {
    const std::string rel = "params/" + params.names[i] + ".tnsr";
    write_tensor_file((dir / rel).string(), params.tensors[i]);
    files.push_back({{"name", params.names[i]}, {"file", rel}, {"shape", params.tensors[i].shape()}});
  }
  json meta = {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"arch", to_json(params.arch)},
               {"schedule", to_json(schedule, true)}, {"step", step}, {"params", files}};
  write_json_file((dir / "meta.json").string(), meta);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir, const ArchConfig* expected = nullptr) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw DataError("no checkpoint at " + dir.string());
  json meta;
  {
    std::ifstream in(meta_path);
    try {
      meta = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError("corrupt checkpoint metadata " + meta_path.string() + ": " + e.what());
    }
  }
  if (meta.value("format", "") != kCheckpointFormat || meta.value("version", 0) != kCheckpointVersion) {
    throw DataError("checkpoint " + dir.string() + ": format/version mismatch");
  }
  Checkpoint ck;
  try {
    const ArchConfig arch = arch_from_json(meta.at("arch"));
    if (expected != nullptr && !(arch == *expected)) {
      throw ArchMismatchError("checkpoint " + dir.string() + ": architecture mismatch (stored " +
                              to_json(arch).dump() + ", expected " + to_json(*expected).dump() + ")");
    }
    ck.schedule = schedule_from_json(meta.at("schedule"), true);
    ck.step = meta.at("step").get<std::uint64_t>();
    ck.params.arch = arch;
    for (const auto& f : meta.at("params")) {
      ck.params.names.push_back(f.at("name").get<std::string>());
      ck.params.tensors.push_back(read_tensor_file((dir / f.at("file").get<std::string>()).string()));
    }
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + dir.string() + ": " + e.what());
  }
  ck.params.validate();
  return ck;
}

}  // namespace uadlab::training
