#pragma once

// Pool-based active learning. Each seed writes one JSONL record:
//   header  {type, format, seed, config, warm_start}
//   metrics {type, step, n_labeled, rmse, mae, nll, crps, cov50..cov95, v_epi, v_ale, v_tot, n, rmse_latent}
//   step    {type, step, index, y, acq_value[, wall_ms]}
//   summary {type, status, final_rmse, final_rmse_latent, final_crps, final_nll, n_evals[, step, error]}
// Metrics are written at step 0, every `cadence` acquisitions and at the
// final step.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbs/acquisition.hpp"
#include "dbs/benchmarks.hpp"
#include "dbs/harness/bo.hpp"
#include "dbs/harness/config.hpp"
#include "dbs/harness/jsonl.hpp"
#include "dbs/harness/pool.hpp"
#include "dbs/metrics.hpp"
#include "dbs/surrogate.hpp"

namespace dbs::harness {

/// Warm-start labels: the same for every method at a given seed.
inline std::vector<std::size_t> warm_start_indices(std::size_t n_pool, std::size_t n_init, std::uint64_t seed) {
  if (n_init > n_pool) throw ConfigError("warm start larger than the pool");
  std::vector<std::size_t> idx(n_pool);
  for (std::size_t i = 0; i < n_pool; ++i) idx[i] = i;
  Rng rng(seed, 0, "al-warm");
  for (std::size_t i = 0; i < n_init; ++i) std::swap(idx[i], idx[i + rng.index(n_pool - i)]);
  idx.resize(n_init);
  std::sort(idx.begin(), idx.end());
  return idx;
}

class AlRun {
 public:
  AlRun(const AlConfig& cfg, const AlPool& pool, std::uint64_t seed, SurrogateFactory factory)
      : cfg_(cfg), pool_(pool), seed_(seed), factory_(std::move(factory)) {}

  SeedOutcome run(const fs::path& path) {
    const auto warm = warm_start_indices(cfg_.n_pool, cfg_.n_init, seed_);
    JsonlLog log(path);
    const nlohmann::json header{{"type", "header"}, {"format", "dbs-al"},     {"seed", seed_},
                                {"config", cfg_.identity()}, {"warm_start", warm}};
    const auto& prev = log.existing();
    if (prev.empty()) {
      log.append(header);
    } else if (prev.front() != header) {
      throw ConfigError("existing record " + path.string() + " was written by a different config");
    }
    if (prev.size() > 1 && prev.back().value("type", "") == "summary") {
      return detail::outcome_from_summary(seed_, prev.back(), "final_rmse");
    }

    labeled_.assign(cfg_.n_pool, false);
    for (auto i : warm) label(i);
    surrogate_ = factory_();

    // Expected sequence of lines after the header.
    struct Event {
      bool metrics;
      std::size_t step;
    };
    std::vector<Event> events{{true, 0}};
    for (std::size_t t = 1; t <= cfg_.n_acq; ++t) {
      events.push_back({false, t});
      if (t % cfg_.cadence == 0 || t == cfg_.n_acq) events.push_back({true, t});
    }

    std::size_t k = 0, step = 0;
    try {
      for (; k + 1 < prev.size(); ++k) {
        const auto& line = prev[k + 1];
        const Event ev = events.at(k);
        step = ev.step;
        if (line.at("type") != (ev.metrics ? "metrics" : "step") || line.at("step").get<std::size_t>() != ev.step) {
          throw ConfigError("record " + path.string() + " does not follow the expected step sequence");
        }
        if (ev.metrics) {
          if (surrogate_->stateful()) surrogate_->condition(x_, y_, s2_);
          last_metrics_ = line;
        } else {
          if (surrogate_->stateful() && cfg_.acq.rule != AcqRule::random) surrogate_->condition(x_, y_, s2_);
          label(line.at("index").get<std::size_t>());
        }
      }
      for (; k < events.size(); ++k) {
        step = events[k].step;
        log.append(events[k].metrics ? metrics_line(step) : take_step(step));
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      nlohmann::json s{{"type", "summary"}, {"status", "failed"}, {"step", step},
                       {"error", e.what()}, {"n_evals", x_.rows()}};
      log.append(s);
      return detail::outcome_from_summary(seed_, s, "final_rmse");
    }
    nlohmann::json s{{"type", "summary"},
                     {"status", "ok"},
                     {"final_rmse", last_metrics_.at("rmse")},
                     {"final_rmse_latent", last_metrics_.at("rmse_latent")},
                     {"final_crps", last_metrics_.at("crps")},
                     {"final_nll", last_metrics_.at("nll")},
                     {"n_evals", x_.rows()}};
    log.append(s);
    return detail::outcome_from_summary(seed_, s, "final_rmse");
  }

 private:
  void label(std::size_t i) {
    if (i >= cfg_.n_pool || labeled_[i]) throw ConfigError("invalid or repeated pool index in record");
    labeled_[i] = true;
    x_.append_row(pool_.x_pool.row(i));
    y_.push_back(pool_.y_pool[i]);
    s2_.push_back(pool_.s2_pool[i]);
  }

  std::vector<std::size_t> unlabeled() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cfg_.n_pool; ++i) {
      if (!labeled_[i]) out.push_back(i);
    }
    return out;
  }

  nlohmann::json metrics_line(std::size_t step) {
    surrogate_->condition(x_, y_, s2_);
    const auto preds = surrogate_->point_predictives(pool_.x_test, pool_.s2_test);
    const MetricsBundle m = compute_metrics(preds, pool_.y_test, cfg_.acq.eps_v);
    double se = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) se += (preds[i].mean - pool_.f_test[i]) * (preds[i].mean - pool_.f_test[i]);
    nlohmann::json line{{"type", "metrics"}, {"step", step}, {"n_labeled", x_.rows()}};
    line.update(nlohmann::json(m));
    line["rmse_latent"] = std::sqrt(se / static_cast<double>(preds.size()));
    for (const auto& [key, v] : line.items()) {
      if (v.is_number_float() && !std::isfinite(v.get<double>())) throw NumericError("non-finite metric " + key);
    }
    last_metrics_ = line;
    return line;
  }

  nlohmann::json take_step(std::size_t step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cand = unlabeled();
    std::size_t pick = 0;
    nlohmann::json acq_value = nullptr;
    if (cfg_.acq.rule == AcqRule::random) {
      Rng rng(seed_, step, "al-random");
      pick = rng.index(cand.size());
    } else {
      surrogate_->condition(x_, y_, s2_);
      const Matrix xc = pool_.x_pool.select_rows(cand);
      std::vector<double> nc(cand.size());
      for (std::size_t i = 0; i < cand.size(); ++i) nc[i] = pool_.s2_pool[cand[i]];
      const auto score = scores(xc, nc);
      pick = argmax(score);
      acq_value = detail::json_or_null(score[pick]);
    }
    const std::size_t index = cand[pick];
    label(index);
    nlohmann::json line{{"type", "step"}, {"step", step}, {"index", index}, {"y", pool_.y_pool[index]},
                        {"acq_value", acq_value}};
    if (cfg_.record_timing) {
      line["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    return line;
  }

  std::vector<double> scores(const Matrix& xc, const std::vector<double>& nc) const {
    std::vector<double> out;
    switch (cfg_.acq.rule) {
      case AcqRule::var:
        for (const auto& s : surrogate_->summarize(xc, nc)) out.push_back(moments(s, cfg_.acq.source, cfg_.acq.eps_v).v);
        return out;
      case AcqRule::bald:
        for (const auto& p : surrogate_->predict(xc, nc)) out.push_back(bald_score(p));
        return out;
      case AcqRule::epig: {
        const std::size_t nt = std::min(cfg_.epig_targets, pool_.x_test.rows());
        std::vector<std::size_t> tidx(nt);
        for (std::size_t i = 0; i < nt; ++i) tidx[i] = i;
        const std::vector<double> nt_noise(pool_.s2_test.begin(), pool_.s2_test.begin() + static_cast<std::ptrdiff_t>(nt));
        const auto cp = surrogate_->predict(xc, nc);
        const auto tp = surrogate_->predict(pool_.x_test.select_rows(tidx), nt_noise);
        const auto items = [](const std::vector<DecoupledPrediction>& ps) {
          std::vector<EpigItem> v;
          for (const auto& p : ps) {
            const auto s = dbs::summarize(p);
            v.push_back({p.representation, s.v_epi, s.v_tot});
          }
          return v;
        };
        const auto ci = items(cp), ti = items(tp);
        return epig_proxy_scores(ci, ti, cfg_.acq.eps_v);
      }
      default:
        throw ContractError("AL rule not supported: " + to_string(cfg_.acq.rule));
    }
  }

  const AlConfig& cfg_;
  const AlPool& pool_;
  std::uint64_t seed_;
  SurrogateFactory factory_;
  std::unique_ptr<Surrogate> surrogate_;
  std::vector<bool> labeled_;
  Matrix x_;
  std::vector<double> y_, s2_;
  nlohmann::json last_metrics_;
};

inline std::vector<SeedOutcome> run_al(const AlConfig& cfg, SurrogateFactory factory = {}) {
  cfg.validate();
  if (!factory) factory = [&cfg] { return make_surrogate(cfg.surrogate); };
  if (factory()->decoupled() != cfg.surrogate.decoupled()) throw ConfigError("surrogate kind mismatch");
  const fs::path root = output_root(cfg.output_root);
  const std::string method = cfg.method_name();
  std::vector<SeedOutcome> out(cfg.seeds.size());
  run_jobs(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    const AlPool pool = make_al_pool(cfg.prior, cfg.n_pool, cfg.n_test, cfg.seeds[i]);
    AlRun run(cfg, pool, cfg.seeds[i], factory);
    out[i] = run.run(run_path(root, cfg.pool_name, method, cfg.seeds[i]));
  });
  write_text(run_dir(root, cfg.pool_name, method) / "summary.csv", summary_csv(out, "final_rmse"));
  return out;
}

}  // namespace dbs::harness
