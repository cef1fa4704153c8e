#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dbs/bins.hpp"
#include "dbs/core/errors.hpp"
#include "dbs/core/matrix.hpp"
#include "dbs/core/normal.hpp"
#include "dbs/core/rng.hpp"
#include "dbs/prediction.hpp"
#include "dbs/sobol.hpp"

namespace dbs {

enum class AcqRule { ei, log_ei, lcb, ts, bald, epig, var, random };
enum class Source { epistemic, total };

inline std::string to_string(AcqRule r) {
  switch (r) {
    case AcqRule::ei: return "ei";
    case AcqRule::log_ei: return "logei";
    case AcqRule::lcb: return "lcb";
    case AcqRule::ts: return "ts";
    case AcqRule::bald: return "bald";
    case AcqRule::epig: return "epig";
    case AcqRule::var: return "var";
    case AcqRule::random: return "random";
  }
  return "?";
}

inline std::string to_string(Source s) { return s == Source::epistemic ? "epi" : "total"; }

inline AcqRule parse_rule(const std::string& s) {
  for (auto r : {AcqRule::ei, AcqRule::log_ei, AcqRule::lcb, AcqRule::ts, AcqRule::bald,
                 AcqRule::epig, AcqRule::var, AcqRule::random}) {
    if (s == to_string(r)) return r;
  }
  throw ConfigError("unknown acquisition rule: " + s);
}

inline Source parse_source(const std::string& s) {
  if (s == "epi" || s == "epistemic") return Source::epistemic;
  if (s == "total") return Source::total;
  throw ConfigError("unknown acquisition source: " + s);
}

struct AcqSpec {
  AcqRule rule = AcqRule::log_ei;
  Source source = Source::epistemic;
  double beta = 2.0;
  double eps_v = 1e-12;
  double eps_ei = 1e-25;
  std::size_t sobol_count = 512;
  std::size_t n_restarts = 8;
  std::size_t refine_steps = 100;

  void validate() const {
    if (!(beta > 0.0)) throw ContractError("AcqSpec: beta must be positive");
    if (!(eps_v > 0.0) || !(eps_ei > 0.0)) throw ContractError("AcqSpec: floors must be positive");
    if (sobol_count < 1 || n_restarts < 1) throw ContractError("AcqSpec: counts must be >= 1");
  }
};

/// Scalar summary of a predictive at one point. Observation-only surrogates
/// set has_epistemic = false and report v_epi = v_tot.
struct PredictiveSummary {
  double mu_f = 0.0;
  double v_epi = 0.0;
  double noise_var = 0.0;
  double mu_y = 0.0;
  double v_tot = 0.0;
  bool has_epistemic = true;
};

inline PredictiveSummary summarize(const DecoupledPrediction& p) {
  PredictiveSummary s;
  const auto obs = pmf_mean_var(*p.grid, p.observation);
  s.mu_y = obs.mean;
  if (p.decoupled()) {
    const auto lat = pmf_mean_var(*p.grid, *p.latent);
    s.mu_f = lat.mean;
    s.v_epi = lat.variance;
    s.noise_var = *p.noise_var;
    s.v_tot = s.v_epi + s.noise_var;
  } else {
    s.has_epistemic = false;
    s.mu_f = obs.mean;
    s.v_epi = s.v_tot = obs.variance;
    s.noise_var = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

struct Moments {
  double mu;
  double v;
};

inline Moments moments(const PredictiveSummary& s, Source source, double eps_v = 1e-12) {
  if (source == Source::epistemic) {
    if (!s.has_epistemic) throw ContractError("epistemic moments requested from an observation-only prediction");
    return {s.mu_f, std::max(s.v_epi, eps_v)};
  }
  return {s.mu_y, std::max(s.v_tot, eps_v)};
}

inline Moments moments(const DecoupledPrediction& p, Source source, double eps_v = 1e-12) {
  return moments(summarize(p), source, eps_v);
}

/// Expected improvement below tau.
inline double ei(double mu, double v, double tau, double eps_v = 1e-12) {
  const double s = std::sqrt(std::max(v, eps_v));
  return std::max(0.0, s * normal::ei_standard((tau - mu) / s));
}

inline double log_ei(double mu, double v, double tau, double eps_ei = 1e-25, double eps_v = 1e-12) {
  return std::log(ei(mu, v, tau, eps_v) + eps_ei);
}

inline double lcb(double mu, double v, double beta, double eps_v = 1e-12) {
  if (!(beta > 0.0)) throw ContractError("lcb: beta must be positive");
  return mu - beta * std::sqrt(std::max(v, eps_v));
}

/// One independent Gaussian draw per candidate.
inline std::vector<double> thompson_scores(std::span<const Moments> m, std::uint64_t seed) {
  if (m.empty()) throw ContractError("thompson_scores: empty candidate set");
  Rng rng(seed, 0, "thompson");
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i].mu + std::sqrt(m[i].v) * rng.normal();
  return out;
}

inline std::size_t argmin(std::span<const double> v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// H(observation) - sum_j latent_j H(T[j, .]) in nats, floored at 0.
inline double bald_score(const DecoupledPrediction& p) {
  if (!p.decoupled()) throw ContractError("bald_score: needs a decoupled prediction");
  const TransitionMatrix t(*p.grid, *p.noise_var);
  double cond = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double pj = (*p.latent)[j];
    if (pj > 0.0) cond += pj * entropy(t.row(j));
  }
  return std::max(0.0, entropy(p.observation.probs()) - cond);
}

struct EpigItem {
  std::span<const double> repr;
  double v_epi;
  double v_tot;
};

inline double epistemic_fraction(double v_epi, double v_tot, double eps_v = 1e-12) {
  return std::clamp(std::max(v_epi, 0.0) / std::max(v_tot, eps_v), 0.0, 1.0);
}

/// Mean over targets of -log(1 - rho^2) / 2 with
/// rho^2 = (r . r')^2 eta eta', clamped to [0, 1 - 1e-9].
inline std::vector<double> epig_proxy_scores(std::span<const EpigItem> cands,
                                             std::span<const EpigItem> targets, double eps_v = 1e-12) {
  if (targets.empty()) throw ContractError("epig_proxy_scores: empty target set");
  std::vector<double> out(cands.size(), 0.0);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double eta = epistemic_fraction(cands[i].v_epi, cands[i].v_tot, eps_v);
    double acc = 0.0;
    for (const auto& t : targets) {
      if (t.repr.size() != cands[i].repr.size()) throw ContractError("epig_proxy_scores: representation size mismatch");
      double dot = 0.0;
      for (std::size_t k = 0; k < t.repr.size(); ++k) dot += cands[i].repr[k] * t.repr[k];
      const double rho2 = std::clamp(dot * dot * eta * epistemic_fraction(t.v_epi, t.v_tot, eps_v), 0.0, 1.0 - 1e-9);
      acc += -0.5 * std::log1p(-rho2);
    }
    out[i] = acc / static_cast<double>(targets.size());
  }
  return out;
}

/// Higher is better. Covers the rules that score points independently.
inline double acquisition_score(const AcqSpec& spec, const PredictiveSummary& s, double tau) {
  const Moments m = moments(s, spec.source, spec.eps_v);
  switch (spec.rule) {
    case AcqRule::ei: return ei(m.mu, m.v, tau, spec.eps_v);
    case AcqRule::log_ei: return log_ei(m.mu, m.v, tau, spec.eps_ei, spec.eps_v);
    case AcqRule::lcb: return -lcb(m.mu, m.v, spec.beta, spec.eps_v);
    case AcqRule::var: return m.v;
    default: throw ContractError("acquisition_score: rule " + to_string(spec.rule) + " is not pointwise");
  }
}

/// Evaluates the surrogate at each row of X.
using BatchSummary = std::function<std::vector<PredictiveSummary>(const Matrix& x)>;

struct Box {
  std::vector<double> lo, hi;

  std::size_t dim() const noexcept { return lo.size(); }
  void validate() const {
    if (lo.empty() || lo.size() != hi.size()) throw ContractError("Box: bound sizes differ");
    for (std::size_t d = 0; d < lo.size(); ++d) {
      if (!(hi[d] > lo[d])) throw ContractError("Box: degenerate bounds");
    }
  }
};

struct AcqChoice {
  std::vector<double> x;
  // Score at x (higher is better); the sampled value for TS, NaN for RANDOM.
  double value = std::numeric_limits<double>::quiet_NaN();
};

/// Sobol screen, then coordinate pattern search from the best n_restarts
/// candidates. TS and RANDOM select from the candidate set only.
inline AcqChoice optimize_acquisition_scored(const BatchSummary& surrogate, const Box& box, const AcqSpec& spec,
                                             double tau, std::uint64_t seed) {
  spec.validate();
  box.validate();
  const std::size_t dim = box.dim();
  if (spec.rule == AcqRule::random) {
    Rng rng(seed, 0, "acq-random");
    std::vector<double> x(dim);
    for (std::size_t d = 0; d < dim; ++d) x[d] = rng.uniform(box.lo[d], box.hi[d]);
    return {std::move(x)};
  }
  if (spec.rule == AcqRule::bald || spec.rule == AcqRule::epig) {
    throw ContractError("optimize_acquisition: " + to_string(spec.rule) + " is pool-based");
  }
  Sobol sobol(dim, derive_key(seed, 0, hash_tag("acq-sobol")) | 1u);
  const Matrix cand = sobol.points(spec.sobol_count, box.lo, box.hi);
  const auto summaries = surrogate(cand);
  if (summaries.size() != cand.rows()) throw ContractError("optimize_acquisition: surrogate returned wrong count");
  const auto row_vec = [&](const Matrix& m, std::size_t i) {
    const auto r = m.row(i);
    return std::vector<double>(r.begin(), r.end());
  };

  if (spec.rule == AcqRule::ts) {
    std::vector<Moments> m;
    m.reserve(summaries.size());
    for (const auto& s : summaries) m.push_back(moments(s, spec.source, spec.eps_v));
    const auto draws = thompson_scores(m, derive_key(seed, 0, hash_tag("acq-ts")));
    const std::size_t i = argmin(draws);
    return {row_vec(cand, i), draws[i]};
  }

  std::vector<double> score(summaries.size());
  for (std::size_t i = 0; i < score.size(); ++i) score[i] = acquisition_score(spec, summaries[i], tau);
  std::vector<std::size_t> order(score.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  const std::size_t n_start = std::min(spec.n_restarts, order.size());

  struct Start {
    std::vector<double> x;
    double score;
    double step;  // fraction of the box width
  };
  std::vector<Start> starts;
  for (std::size_t r = 0; r < n_start; ++r) starts.push_back({row_vec(cand, order[r]), score[order[r]], 0.1});

  constexpr double kMinStep = 1e-7;
  for (std::size_t it = 0; it < spec.refine_steps; ++it) {
    std::vector<std::size_t> active;
    for (std::size_t r = 0; r < starts.size(); ++r) {
      if (starts[r].step >= kMinStep) active.push_back(r);
    }
    if (active.empty()) break;
    Matrix trial(active.size() * 2 * dim, dim);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& s = starts[active[a]];
      for (std::size_t d = 0; d < dim; ++d) {
        for (int sign = 0; sign < 2; ++sign) {
          const std::size_t row = (a * dim + d) * 2 + static_cast<std::size_t>(sign);
          for (std::size_t e = 0; e < dim; ++e) trial(row, e) = s.x[e];
          const double delta = (sign ? -1.0 : 1.0) * s.step * (box.hi[d] - box.lo[d]);
          trial(row, d) = std::clamp(s.x[d] + delta, box.lo[d], box.hi[d]);
        }
      }
    }
    const auto ts = surrogate(trial);
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& s = starts[active[a]];
      std::size_t best = trial.rows();
      double best_score = s.score;
      for (std::size_t k = 0; k < 2 * dim; ++k) {
        const std::size_t row = a * 2 * dim + k;
        const double v = acquisition_score(spec, ts[row], tau);
        if (v > best_score) {
          best_score = v;
          best = row;
        }
      }
      if (best < trial.rows()) {
        s.x = row_vec(trial, best);
        s.score = best_score;
      } else {
        s.step *= 0.5;
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < starts.size(); ++r) {
    if (starts[r].score > starts[best].score) best = r;
  }
  return {starts[best].x, starts[best].score};
}

inline std::vector<double> optimize_acquisition(const BatchSummary& surrogate, const Box& box, const AcqSpec& spec,
                                                double tau, std::uint64_t seed) {
  return optimize_acquisition_scored(surrogate, box, spec, tau, seed).x;
}

}  // namespace dbs
