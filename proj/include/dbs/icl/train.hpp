#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "dbs/icl/model.hpp"
#include "dbs/task_prior.hpp"
#include "json.hpp"

namespace dbs::icl {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  double weight_decay = 1e-5;
  double grad_clip = 5.0;
  std::size_t warmup_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;

  void validate() const {
    if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) {
      throw DomainError("TrainConfig: rates must be nonnegative");
    }
    if (!(grad_clip > 0.0)) throw DomainError("TrainConfig: grad_clip must be positive");
    weights.validate();
  }

  /// Linear warmup to learning_rate, then cosine decay to zero at `steps`.
  double lr_at(std::size_t step) const {
    if (step < warmup_steps) {
      return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (steps <= warmup_steps) return learning_rate;
    const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(steps - warmup_steps);
    return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
  }
};

/// Decoupled-weight-decay Adam over a float parameter vector; moments and
/// the update are computed in double.
class AdamW {
 public:
  explicit AdamW(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<float>& params, const std::vector<double>& grad, double lr,
            const TrainConfig& cfg) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grad[i];
      v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg.adam_eps);
      const double p = params[i];
      params[i] = static_cast<float>(p - lr * (update + cfg.weight_decay * p));
    }
  }

 private:
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

inline double clip_global_norm(std::vector<double>& grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

/// Produces the batch for a given step.
using TaskSource = std::function<std::vector<TrainTask>(std::size_t step, std::size_t batch_size)>;

inline TrainTask to_train_task(const SyntheticTask& t) {
  TrainTask out;
  std::vector<std::size_t> ctx(t.n_context), qry(t.n_queries());
  for (std::size_t i = 0; i < t.n_context; ++i) ctx[i] = i;
  for (std::size_t i = 0; i < qry.size(); ++i) qry[i] = t.n_context + i;
  out.x_ctx = t.X.select_rows(ctx);
  out.x_qry = t.X.select_rows(qry);
  out.y_ctx.assign(t.y.begin(), t.y.begin() + static_cast<std::ptrdiff_t>(t.n_context));
  out.y_qry.assign(t.y.begin() + static_cast<std::ptrdiff_t>(t.n_context), t.y.end());
  out.f_qry.assign(t.f.begin() + static_cast<std::ptrdiff_t>(t.n_context), t.f.end());
  out.sigma2_qry.assign(t.sigma2.begin() + static_cast<std::ptrdiff_t>(t.n_context), t.sigma2.end());
  out.seed = t.rng_seed;
  return out;
}

/// Fresh tasks from the prior at every step: task i of step s has seed
/// task_seed(seed, s * batch_size + i).
inline TaskSource prior_source(TaskPriorConfig cfg, std::uint64_t seed) {
  cfg.validate();
  return [cfg, seed](std::size_t step, std::size_t batch) {
    std::vector<TrainTask> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      out.push_back(to_train_task(sample_task(cfg, task_seed(seed, step * batch + i))));
    }
    return out;
  };
}

struct TrainResult {
  std::vector<float> params;
  std::vector<double> loss_log;
  std::vector<double> grad_norm_log;
  std::size_t steps_done = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Runs cfg.steps optimizer steps starting from init (or a seeded random
/// initialization when init is empty). Deterministic given its inputs.
inline TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const TaskSource& source,
                         std::uint64_t seed, std::vector<float> init = {},
                         const StepCallback& on_step = {}) {
  cfg.validate();
  const Layout layout(spec);
  TrainResult res;
  res.params = init.empty() ? init_params(layout, seed) : std::move(init);
  if (res.params.size() != layout.size()) throw DomainError("train: initial parameter count mismatch");
  AdamW opt(layout.size());
  std::vector<double> grad;
  res.loss_log.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = source(step, cfg.batch_size);
    double loss;
    try {
      loss = loss_and_grad<float>(spec, layout, res.params, batch, cfg.weights, grad);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss) || loss > 1e6) {
      throw NumericError("training diverged at step " + std::to_string(step));
    }
    res.grad_norm_log.push_back(clip_global_norm(grad, cfg.grad_clip));
    opt.step(res.params, grad, cfg.lr_at(step), cfg);
    res.loss_log.push_back(loss);
    res.steps_done = step + 1;
    if (on_step) on_step(step, loss);
  }
  return res;
}

inline TrainResult train(const ModelSpec& spec, const TrainConfig& cfg,
                         const TaskPriorConfig& prior, std::uint64_t seed,
                         const StepCallback& on_step = {}) {
  return train(spec, cfg, prior_source(prior, seed), seed, {}, on_step);
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned JSON document.

inline constexpr int kCheckpointVersion = 1;

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"grad_clip", c.grad_clip},
                     {"warmup_steps", c.warmup_steps},
                     {"loss_weights", {c.weights.lambda_y, c.weights.lambda_f, c.weights.lambda_sigma}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "steps") c.steps = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "warmup_steps") c.warmup_steps = v.get<std::size_t>();
      else if (key == "loss_weights") c.weights = {v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()};
      else throw ConfigError("unknown train config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

struct Checkpoint {
  ModelSpec spec;
  std::vector<float> params;
  TrainConfig train_config;
  std::uint64_t seed = 0;
  std::size_t step = 0;

  Model model() const { return Model(spec, params); }
};

inline nlohmann::json checkpoint_json(const Checkpoint& c) {
  const Layout layout(c.spec);
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : layout.blocks()) {
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  }
  return {{"format", "dbs-icl-checkpoint"}, {"version", kCheckpointVersion},
          {"spec", c.spec},                  {"layout", blocks},
          {"params", c.params},              {"train_config", c.train_config},
          {"seed", c.seed},                  {"step", c.step}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dbs-icl-checkpoint") throw ConfigError("not a model checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
  Checkpoint c;
  c.spec = j.at("spec").get<ModelSpec>();
  c.params = j.at("params").get<std::vector<float>>();
  c.train_config = j.at("train_config").get<TrainConfig>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.step = j.at("step").get<std::size_t>();
  const Layout layout(c.spec);
  if (c.params.size() != layout.size()) throw ConfigError("checkpoint parameter count mismatch");
  const auto& blocks = j.at("layout");
  if (blocks.size() != layout.blocks().size()) throw ConfigError("checkpoint layout mismatch");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = layout.blocks()[i];
    if (blocks[i].at("name") != b.name || blocks[i].at("offset") != b.offset) {
      throw ConfigError("checkpoint layout mismatch at " + b.name);
    }
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << checkpoint_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace dbs::icl
