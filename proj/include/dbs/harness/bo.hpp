#pragma once

// Bayesian-optimization loop. Each seed writes one JSONL record:
//   header  {type, format, seed, config}
//   step    {type, step, phase, u, x, y, latent_f, incumbent, regret, acq_value[, wall_ms]}
//   summary {type, status, final_regret, best_latent, n_evals[, step, error]}
// The optimizer works in the unit cube; x is u mapped to the benchmark box.

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbs/acquisition.hpp"
#include "dbs/benchmarks.hpp"
#include "dbs/harness/config.hpp"
#include "dbs/harness/jsonl.hpp"
#include "dbs/harness/pool.hpp"
#include "dbs/sobol.hpp"
#include "dbs/surrogate.hpp"

namespace dbs::harness {

using SurrogateFactory = std::function<std::unique_ptr<Surrogate>()>;

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  double final_value = std::numeric_limits<double>::quiet_NaN();  // regret (BO) or RMSE (AL)
  std::size_t n_evals = 0;
  std::string error;
  nlohmann::json summary;
};

/// Shared initial design: depends on the seed and dimension only.
inline Matrix initial_design(std::size_t dim, std::size_t n, std::uint64_t seed) {
  Sobol sobol(dim, derive_key(seed, 0, hash_tag("bo-init")) | 1u);
  const std::vector<double> lo(dim, 0.0), hi(dim, 1.0);
  return sobol.points(n, lo, hi);
}

namespace detail {

inline std::vector<double> to_box(const Benchmark& b, std::span<const double> u) {
  std::vector<double> x(u.size());
  for (std::size_t d = 0; d < u.size(); ++d) x[d] = b.lo[d] + u[d] * (b.hi[d] - b.lo[d]);
  return x;
}

inline SeedOutcome outcome_from_summary(std::uint64_t seed, const nlohmann::json& s, const char* value_key) {
  SeedOutcome o;
  o.seed = seed;
  o.ok = s.at("status") == "ok";
  if (s.contains(value_key) && s[value_key].is_number()) o.final_value = s[value_key].get<double>();
  o.n_evals = s.value("n_evals", std::size_t{0});
  o.error = s.value("error", std::string{});
  o.summary = s;
  return o;
}

inline nlohmann::json json_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

class BoRun {
 public:
  BoRun(const BoConfig& cfg, Benchmark bench, std::uint64_t seed, SurrogateFactory factory)
      : cfg_(cfg), bench_(std::move(bench)), seed_(seed), factory_(std::move(factory)) {}

  SeedOutcome run(const fs::path& path) {
    JsonlLog log(path);
    const nlohmann::json header{{"type", "header"}, {"format", "dbs-bo"}, {"seed", seed_}, {"config", cfg_.identity()}};
    const auto& prev = log.existing();
    if (prev.empty()) {
      log.append(header);
    } else if (prev.front() != header) {
      throw ConfigError("existing record " + path.string() + " was written by a different config");
    }
    if (prev.size() > 1 && prev.back().value("type", "") == "summary") {
      return detail::outcome_from_summary(seed_, prev.back(), "final_regret");
    }

    const std::size_t total = cfg_.n_init + cfg_.n_steps;
    const Matrix init = initial_design(bench_.dim(), cfg_.n_init, seed_);
    if (cfg_.acq.rule != AcqRule::random) surrogate_ = factory_();

    std::size_t step = 1;
    try {
      for (std::size_t i = 1; i < prev.size(); ++i) {
        const auto& line = prev[i];
        if (line.at("step").get<std::size_t>() != step) throw ConfigError("non-contiguous steps in " + path.string());
        if (step > cfg_.n_init && surrogate_ && surrogate_->stateful()) surrogate_->condition(u_, y_, noise_);
        push(line.at("u").get<std::vector<double>>(), line.at("y").get<double>(), line.at("latent_f").get<double>());
        ++step;
      }
      for (; step <= total; ++step) log.append(take_step(step, init));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      nlohmann::json s{{"type", "summary"}, {"status", "failed"}, {"step", step},
                       {"error", e.what()}, {"n_evals", u_.rows()}};
      log.append(s);
      return detail::outcome_from_summary(seed_, s, "final_regret");
    }
    nlohmann::json s{{"type", "summary"}, {"status", "ok"}, {"final_regret", regret_},
                     {"best_latent", best_latent_}, {"n_evals", u_.rows()}};
    log.append(s);
    return detail::outcome_from_summary(seed_, s, "final_regret");
  }

 private:
  double noise_var(std::span<const double> u) const {
    const double sd = bench_.noise_sd_at(detail::to_box(bench_, u));
    return sd * sd;
  }

  void push(std::vector<double> u, double y, double latent) {
    noise_.push_back(noise_var(u));
    u_.append_row(u);
    y_.push_back(y);
    best_latent_ = std::min(best_latent_, latent);
    const double r = simple_regret(bench_, best_latent_);
    if (r > regret_) throw std::logic_error("regret increased");
    regret_ = r;
  }

  nlohmann::json take_step(std::size_t step, const Matrix& init) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> u;
    nlohmann::json incumbent = nullptr, acq_value = nullptr;
    if (step <= cfg_.n_init) {
      u.assign(init.row(step - 1).begin(), init.row(step - 1).end());
    } else {
      double tau = std::numeric_limits<double>::infinity();
      if (surrogate_) {
        surrogate_->condition(u_, y_, noise_);
        for (const auto& s : surrogate_->summarize(u_, noise_)) {
          tau = std::min(tau, surrogate_->decoupled() ? s.mu_f : s.mu_y);
        }
        incumbent = tau;
      }
      const BatchSummary batch = [this](const Matrix& xq) {
        std::vector<double> nq(xq.rows());
        for (std::size_t i = 0; i < xq.rows(); ++i) nq[i] = noise_var(xq.row(i));
        return surrogate_->summarize(xq, nq);
      };
      const Box unit{std::vector<double>(bench_.dim(), 0.0), std::vector<double>(bench_.dim(), 1.0)};
      auto choice = optimize_acquisition_scored(batch, unit, cfg_.acq, tau, derive_key(seed_, step, hash_tag("bo-acq")));
      u = std::move(choice.x);
      acq_value = detail::json_or_null(choice.value);
    }
    const auto x = detail::to_box(bench_, u);
    const Evaluation e = bench_.evaluate(x, seed_, step);
    push(u, e.y, e.latent);
    nlohmann::json line{{"type", "step"},       {"step", step},           {"phase", step <= cfg_.n_init ? "init" : "acq"},
                        {"u", u},               {"x", x},                 {"y", e.y},
                        {"latent_f", e.latent}, {"incumbent", incumbent}, {"regret", regret_},
                        {"acq_value", acq_value}};
    if (cfg_.record_timing) {
      line["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    return line;
  }

  const BoConfig& cfg_;
  Benchmark bench_;
  std::uint64_t seed_;
  SurrogateFactory factory_;
  std::unique_ptr<Surrogate> surrogate_;
  Matrix u_;
  std::vector<double> y_, noise_;
  double best_latent_ = std::numeric_limits<double>::infinity();
  double regret_ = std::numeric_limits<double>::infinity();
};

inline std::string summary_csv(const std::vector<SeedOutcome>& outcomes, const char* value_column) {
  std::ostringstream out;
  out << "seed,status," << value_column << ",n_evals\n";
  for (const auto& o : outcomes) {
    out << o.seed << ',' << (o.ok ? "ok" : "failed") << ',' << fmt_double(o.final_value) << ',' << o.n_evals << '\n';
  }
  return out.str();
}

/// Runs every seed (failures are recorded, not thrown) and writes
/// summary.csv next to the records.
inline std::vector<SeedOutcome> run_bo(const BoConfig& cfg, SurrogateFactory factory = {}) {
  cfg.validate();
  const Benchmark bench = make_benchmark(cfg.benchmark, cfg.ackley_noise_sd);
  if (!factory) factory = [&cfg] { return make_surrogate(cfg.surrogate); };
  if (cfg.acq.rule != AcqRule::random) {
    if (cfg.surrogate.kind != SurrogateKind::gp_oracle) {
      const auto ckpt = icl::load_checkpoint(cfg.surrogate.checkpoint);
      if (ckpt.spec.input_dim_max < bench.dim()) throw ConfigError("model input width is smaller than the benchmark");
    }
    if (factory()->decoupled() != cfg.surrogate.decoupled()) throw ConfigError("surrogate kind mismatch");
  }
  const fs::path root = output_root(cfg.output_root);
  const std::string method = cfg.method_name();
  std::vector<SeedOutcome> out(cfg.seeds.size());
  run_jobs(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    BoRun run(cfg, bench, cfg.seeds[i], factory);
    out[i] = run.run(run_path(root, cfg.benchmark, method, cfg.seeds[i]));
  });
  write_text(run_dir(root, cfg.benchmark, method) / "summary.csv", summary_csv(out, "final_regret"));
  return out;
}

}  // namespace dbs::harness
