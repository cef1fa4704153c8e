#pragma once

// Run configurations for the BO and AL loops, their JSON form, and the
// surrogate factory.

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbs/acquisition.hpp"
#include "dbs/core/errors.hpp"
#include "dbs/icl/train.hpp"
#include "dbs/surrogate.hpp"
#include "dbs/task_prior.hpp"

namespace dbs::harness {

enum class SurrogateKind { gp_oracle, decoupled_icl, tuned_icl };

inline std::string to_string(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::gp_oracle: return "gp-oracle";
    case SurrogateKind::decoupled_icl: return "decoupled-icl";
    case SurrogateKind::tuned_icl: return "tuned-icl";
  }
  return "?";
}

inline SurrogateKind parse_surrogate_kind(const std::string& s) {
  for (auto k : {SurrogateKind::gp_oracle, SurrogateKind::decoupled_icl, SurrogateKind::tuned_icl}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown surrogate: " + s);
}

/// Short label used in method names.
inline std::string short_name(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::gp_oracle: return "gp";
    case SurrogateKind::decoupled_icl: return "dec";
    case SurrogateKind::tuned_icl: return "tuned";
  }
  return "?";
}

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::gp_oracle;
  std::string checkpoint;
  // GP only: take the benchmark's noise variance as known.
  bool known_noise = true;
  std::size_t refit_every = 1;

  bool decoupled() const noexcept { return kind != SurrogateKind::tuned_icl; }

  void validate() const {
    if (kind != SurrogateKind::gp_oracle && checkpoint.empty()) {
      throw ConfigError(to_string(kind) + " surrogate needs a checkpoint path");
    }
    if (refit_every < 1) throw ConfigError("refit_every must be >= 1");
  }
};

inline std::unique_ptr<Surrogate> make_surrogate(const SurrogateSpec& spec) {
  spec.validate();
  if (spec.kind == SurrogateKind::gp_oracle) {
    GpSurrogate::Options opt;
    opt.known_noise = spec.known_noise;
    opt.refit_every = spec.refit_every;
    return std::make_unique<GpSurrogate>(opt);
  }
  const auto ckpt = icl::load_checkpoint(spec.checkpoint);
  const auto want = spec.kind == SurrogateKind::tuned_icl ? icl::Variant::tuned : icl::Variant::decoupled;
  if (ckpt.spec.variant != want) {
    throw ConfigError("checkpoint " + spec.checkpoint + " holds a " + icl::to_string(ckpt.spec.variant) +
                      " model, config asks for " + to_string(spec.kind));
  }
  return std::make_unique<IclSurrogate>(ckpt.model());
}

/// Fails before any evaluation when the pairing cannot work.
inline void check_pairing(const SurrogateSpec& s, const AcqSpec& a) {
  if (a.rule == AcqRule::random) return;
  if (!s.decoupled() && a.source == Source::epistemic) {
    throw ConfigError("tuned surrogate has no epistemic channel; use source \"total\"");
  }
  if (!s.decoupled() && (a.rule == AcqRule::bald || a.rule == AcqRule::epig)) {
    throw ConfigError(to_string(a.rule) + " needs a decoupled surrogate");
  }
}

inline std::string default_method_name(const SurrogateSpec& s, const AcqSpec& a) {
  if (a.rule == AcqRule::random) return "random";
  if (a.rule == AcqRule::bald || a.rule == AcqRule::epig) return short_name(s.kind) + "-" + to_string(a.rule);
  return short_name(s.kind) + "-" + to_string(a.rule) + "-" + to_string(a.source);
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

template <class F>
void for_keys(const nlohmann::json& j, const std::string& what, F&& f) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (!f(key, value)) throw ConfigError("unknown " + what + " key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::uint64_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

inline std::vector<std::uint64_t> parse_seeds(const nlohmann::json& v) {
  std::vector<std::uint64_t> seeds;
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 1) throw ConfigError("seed count must be >= 1");
    seeds = seed_range(v.get<std::uint64_t>());
  } else {
    seeds = v.get<std::vector<std::uint64_t>>();
  }
  return seeds;
}

inline void check_seeds(const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const AcqSpec& a) {
  return {{"rule", to_string(a.rule)},       {"source", to_string(a.source)},   {"beta", a.beta},
          {"eps_v", a.eps_v},                {"eps_ei", a.eps_ei},              {"sobol_count", a.sobol_count},
          {"n_restarts", a.n_restarts},      {"refine_steps", a.refine_steps}};
}

inline void update_from_json(AcqSpec& a, const nlohmann::json& j) {
  detail::for_keys(j, "acq", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "rule") a.rule = parse_rule(v.get<std::string>());
    else if (k == "source") a.source = parse_source(v.get<std::string>());
    else if (k == "beta") a.beta = v.get<double>();
    else if (k == "eps_v") a.eps_v = v.get<double>();
    else if (k == "eps_ei") a.eps_ei = v.get<double>();
    else if (k == "sobol_count") a.sobol_count = v.get<std::size_t>();
    else if (k == "n_restarts") a.n_restarts = v.get<std::size_t>();
    else if (k == "refine_steps") a.refine_steps = v.get<std::size_t>();
    else return false;
    return true;
  });
  try {
    a.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

inline nlohmann::json to_json(const SurrogateSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}, {"refit_every", s.refit_every}};
  if (s.kind == SurrogateKind::gp_oracle) j["known_noise"] = s.known_noise;
  else j["checkpoint"] = s.checkpoint;
  return j;
}

inline void update_from_json(SurrogateSpec& s, const nlohmann::json& j) {
  detail::for_keys(j, "surrogate", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "kind") s.kind = parse_surrogate_kind(v.get<std::string>());
    else if (k == "checkpoint") s.checkpoint = v.get<std::string>();
    else if (k == "known_noise") s.known_noise = v.get<bool>();
    else if (k == "refit_every") s.refit_every = v.get<std::size_t>();
    else return false;
    return true;
  });
}

// ---------------------------------------------------------------------------
// Bayesian optimization

struct BoConfig {
  std::string benchmark = "branin";
  std::string method;  // empty: derived from surrogate and acquisition
  SurrogateSpec surrogate;
  AcqSpec acq;
  std::size_t n_steps = 100;
  std::size_t n_init = 8;
  std::vector<std::uint64_t> seeds = detail::seed_range(10);
  double ackley_noise_sd = 0.5;
  bool record_timing = false;
  std::size_t jobs = 1;
  std::string output_root;

  std::string method_name() const { return method.empty() ? default_method_name(surrogate, acq) : method; }

  void validate() const {
    surrogate.validate();
    try {
      acq.validate();
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
    if (acq.rule == AcqRule::bald || acq.rule == AcqRule::epig || acq.rule == AcqRule::var) {
      throw ConfigError("BO does not support the " + to_string(acq.rule) + " rule");
    }
    check_pairing(surrogate, acq);
    if (n_init < 1) throw ConfigError("n_init must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    detail::check_seeds(seeds);
  }

  /// The part of the config that determines a seed's record.
  nlohmann::json identity() const {
    return {{"benchmark", benchmark},   {"method", method_name()},  {"surrogate", to_json(surrogate)},
            {"acq", to_json(acq)},      {"n_steps", n_steps},       {"n_init", n_init},
            {"ackley_noise_sd", ackley_noise_sd}, {"record_timing", record_timing}};
  }
};

inline BoConfig bo_config_from_json(const nlohmann::json& j) {
  BoConfig c;
  c.surrogate.refit_every = 1;
  detail::for_keys(j, "bo config", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "benchmark") c.benchmark = v.get<std::string>();
    else if (k == "method") c.method = v.get<std::string>();
    else if (k == "surrogate") update_from_json(c.surrogate, v);
    else if (k == "acq") update_from_json(c.acq, v);
    else if (k == "n_steps") c.n_steps = v.get<std::size_t>();
    else if (k == "n_init") c.n_init = v.get<std::size_t>();
    else if (k == "seeds") c.seeds = detail::parse_seeds(v);
    else if (k == "ackley_noise_sd") c.ackley_noise_sd = v.get<double>();
    else if (k == "record_timing") c.record_timing = v.get<bool>();
    else if (k == "jobs") c.jobs = v.get<std::size_t>();
    else if (k == "output_root") c.output_root = v.get<std::string>();
    else return false;
    return true;
  });
  return c;
}

// ---------------------------------------------------------------------------
// Pool-based active learning

struct AlConfig {
  std::string pool_name = "al-synthetic";
  std::string method;
  TaskPriorConfig prior = default_prior();
  std::size_t n_pool = 1000;
  std::size_t n_test = 500;
  std::size_t n_init = 64;
  std::size_t n_acq = 256;
  std::size_t cadence = 16;
  std::size_t epig_targets = 512;
  SurrogateSpec surrogate = default_surrogate();
  AcqSpec acq = default_acq();
  std::vector<std::uint64_t> seeds = detail::seed_range(10);
  bool record_timing = false;
  std::size_t jobs = 1;
  std::string output_root;

  static TaskPriorConfig default_prior() {
    TaskPriorConfig p;
    p.dim_range = {2, 4};
    p.p_hetero = 1.0;
    return p;
  }
  static SurrogateSpec default_surrogate() {
    SurrogateSpec s;
    s.refit_every = 16;
    return s;
  }
  static AcqSpec default_acq() {
    AcqSpec a;
    a.rule = AcqRule::var;
    return a;
  }

  std::string method_name() const { return method.empty() ? default_method_name(surrogate, acq) : method; }

  void validate() const {
    surrogate.validate();
    if (acq.rule != AcqRule::var && acq.rule != AcqRule::bald && acq.rule != AcqRule::epig &&
        acq.rule != AcqRule::random) {
      throw ConfigError("AL supports var, bald, epig and random, not " + to_string(acq.rule));
    }
    check_pairing(surrogate, acq);
    if (n_pool < 1 || n_test < 1) throw ConfigError("pool and test sizes must be >= 1");
    if (n_init < 2) throw ConfigError("n_init must be >= 2");
    if (n_init + n_acq > n_pool) {
      throw ConfigError("pool of " + std::to_string(n_pool) + " is exhausted by " + std::to_string(n_init) +
                        " warm-start labels plus " + std::to_string(n_acq) + " acquisitions");
    }
    if (cadence < 1) throw ConfigError("cadence must be >= 1");
    if (epig_targets < 1) throw ConfigError("epig_targets must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    detail::check_seeds(seeds);
  }

  nlohmann::json identity() const {
    return {{"pool", pool_name},          {"method", method_name()},     {"prior", prior},
            {"n_pool", n_pool},           {"n_test", n_test},            {"n_init", n_init},
            {"n_acq", n_acq},             {"cadence", cadence},          {"epig_targets", epig_targets},
            {"surrogate", to_json(surrogate)}, {"acq", to_json(acq)},    {"record_timing", record_timing}};
  }
};

inline AlConfig al_config_from_json(const nlohmann::json& j) {
  AlConfig c;
  detail::for_keys(j, "al config", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "pool_name") c.pool_name = v.get<std::string>();
    else if (k == "method") c.method = v.get<std::string>();
    else if (k == "prior") from_json(v, c.prior);
    else if (k == "n_pool") c.n_pool = v.get<std::size_t>();
    else if (k == "n_test") c.n_test = v.get<std::size_t>();
    else if (k == "n_init") c.n_init = v.get<std::size_t>();
    else if (k == "n_acq") c.n_acq = v.get<std::size_t>();
    else if (k == "cadence") c.cadence = v.get<std::size_t>();
    else if (k == "epig_targets") c.epig_targets = v.get<std::size_t>();
    else if (k == "surrogate") update_from_json(c.surrogate, v);
    else if (k == "acq") update_from_json(c.acq, v);
    else if (k == "seeds") c.seeds = detail::parse_seeds(v);
    else if (k == "record_timing") c.record_timing = v.get<bool>();
    else if (k == "jobs") c.jobs = v.get<std::size_t>();
    else if (k == "output_root") c.output_root = v.get<std::string>();
    else return false;
    return true;
  });
  return c;
}

}  // namespace dbs::harness
