// dbs: task generation, model training, BO/AL sweeps, the teaser demo and
// rank reports.
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric failure (including a
// sweep in which some seed failed).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbs/harness/al.hpp"
#include "dbs/harness/bo.hpp"
#include "dbs/harness/report.hpp"
#include "dbs/harness/teaser.hpp"
#include "dbs/icl/train.hpp"
#include "dbs/task_prior.hpp"

using namespace dbs;
using namespace dbs::harness;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
}

// "0-9", "1,4,7" or a mix of both.
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      const auto dash = part.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash)), hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) throw ConfigError("bad seed range " + part);
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list: " + text);
    }
  }
  return out;
}

struct Common {
  std::string config;
  std::string output;
  std::string seeds;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "JSON config file");
  sub->add_option("-o,--output", c.output, "output root (default: $DBS_OUTPUT_ROOT or ./out)");
  sub->add_option("--seeds", c.seeds, "seed list, e.g. 0-9 or 1,3,5");
}

int sweep_status(const std::vector<SeedOutcome>& out, const std::string& label) {
  int failed = 0;
  for (const auto& o : out) {
    if (!o.ok) {
      ++failed;
      std::cerr << label << " seed " << o.seed << " failed: " << o.error << '\n';
    }
  }
  return failed ? exit_code::numeric : exit_code::ok;
}

// ---------------------------------------------------------------------------

struct GenTasksArgs {
  Common c;
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_tasks(const GenTasksArgs& a) {
  TaskPriorConfig prior;
  from_json(load_json(a.c.config), prior);
  const fs::path path = a.out.empty() ? output_root(a.c.output) / "tasks" / ("tasks_" + std::to_string(a.seed) + ".jsonl")
                                      : fs::path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  for (std::size_t i = 0; i < a.n; ++i) f << json(sample_task(prior, task_seed(a.seed, i))).dump() << '\n';
  std::cout << "wrote " << a.n << " tasks to " << path.string() << '\n';
  return exit_code::ok;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common c;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string out;
  std::size_t log_every = 100;
};

int train_cmd(const TrainArgs& a) {
  const json cfg = load_json(a.c.config);
  icl::ModelSpec spec;
  icl::TrainConfig tc;
  TaskPriorConfig prior;
  std::uint64_t seed = 0;
  std::string out;
  harness::detail::for_keys(cfg, "train config", [&](const std::string& k, const json& v) {
    if (k == "model") icl::from_json(v, spec);
    else if (k == "train") icl::from_json(v, tc);
    else if (k == "prior") from_json(v, prior);
    else if (k == "seed") seed = v.get<std::uint64_t>();
    else if (k == "checkpoint") out = v.get<std::string>();
    else return false;
    return true;
  });
  if (a.steps) tc.steps = *a.steps;
  if (a.seed) seed = *a.seed;
  if (!a.variant.empty()) spec.variant = icl::parse_variant(a.variant);
  if (!a.out.empty()) out = a.out;
  if (out.empty()) out = (output_root(a.c.output) / "checkpoints" / (std::string(icl::to_string(spec.variant)) + ".json")).string();
  spec.validate();

  const auto t0 = std::chrono::steady_clock::now();
  const auto res = icl::train(spec, tc, prior, seed, [&](std::size_t step, double loss) {
    if (a.log_every && (step + 1) % a.log_every == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %zu  loss %.4f  %.0fs\n", step + 1, loss, s);
      std::fflush(stdout);
    }
  });
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  icl::save_checkpoint({spec, res.params, tc, seed, res.steps_done}, out);
  std::cout << "checkpoint " << out << '\n';
  return exit_code::ok;
}

// ---------------------------------------------------------------------------

struct AcqOverrides {
  std::string rule, source, surrogate, checkpoint, method;
  std::optional<double> beta;
  std::optional<std::size_t> jobs;
  bool timing = false;
};

void add_acq(CLI::App* sub, AcqOverrides& o) {
  sub->add_option("--acq", o.rule, "acquisition rule");
  sub->add_option("--source", o.source, "variance source: epi | total");
  sub->add_option("--beta", o.beta, "LCB width");
  sub->add_option("--surrogate", o.surrogate, "gp-oracle | decoupled-icl | tuned-icl");
  sub->add_option("--checkpoint", o.checkpoint, "model checkpoint for ICL surrogates");
  sub->add_option("--method", o.method, "method label used in output paths");
  sub->add_option("-j,--jobs", o.jobs, "seeds run in parallel");
  sub->add_flag("--timing", o.timing, "record wall-clock time per step");
}

template <class Cfg>
void apply(Cfg& cfg, const Common& c, const AcqOverrides& o) {
  if (!o.rule.empty()) cfg.acq.rule = parse_rule(o.rule);
  if (!o.source.empty()) cfg.acq.source = parse_source(o.source);
  if (o.beta) cfg.acq.beta = *o.beta;
  if (!o.surrogate.empty()) cfg.surrogate.kind = parse_surrogate_kind(o.surrogate);
  if (!o.checkpoint.empty()) cfg.surrogate.checkpoint = o.checkpoint;
  if (!o.method.empty()) cfg.method = o.method;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.timing) cfg.record_timing = true;
  if (!c.seeds.empty()) cfg.seeds = parse_seed_list(c.seeds);
  if (!c.output.empty()) cfg.output_root = c.output;
}

struct BoArgs {
  Common c;
  AcqOverrides o;
  std::string benchmark;
  std::optional<std::size_t> steps, init;
};

int bo_cmd(const BoArgs& a) {
  BoConfig cfg = bo_config_from_json(load_json(a.c.config));
  apply(cfg, a.c, a.o);
  if (!a.benchmark.empty()) cfg.benchmark = a.benchmark;
  if (a.steps) cfg.n_steps = *a.steps;
  if (a.init) cfg.n_init = *a.init;
  const auto out = run_bo(cfg);
  std::vector<double> ok;
  for (const auto& o : out) {
    if (o.ok) ok.push_back(o.final_value);
  }
  std::cout << cfg.benchmark << ' ' << cfg.method_name() << ": " << ok.size() << '/' << out.size() << " seeds ok";
  if (!ok.empty()) std::cout << ", median final regret " << median(ok);
  std::cout << '\n';
  return sweep_status(out, cfg.method_name());
}

struct AlArgs {
  Common c;
  AcqOverrides o;
  std::optional<std::size_t> n_acq;
};

int al_cmd(const AlArgs& a) {
  AlConfig cfg = al_config_from_json(load_json(a.c.config));
  apply(cfg, a.c, a.o);
  if (a.n_acq) cfg.n_acq = *a.n_acq;
  const auto out = run_al(cfg);
  std::vector<double> ok;
  for (const auto& o : out) {
    if (o.ok) ok.push_back(o.final_value);
  }
  std::cout << cfg.pool_name << ' ' << cfg.method_name() << ": " << ok.size() << '/' << out.size() << " seeds ok";
  if (!ok.empty()) std::cout << ", median final RMSE " << median(ok);
  std::cout << '\n';
  return sweep_status(out, cfg.method_name());
}

// ---------------------------------------------------------------------------

struct TeaserArgs {
  Common c;
  TeaserOptions opt;
};

int teaser_cmd(const TeaserArgs& a) {
  const auto seeds = a.c.seeds.empty() ? harness::detail::seed_range(10) : parse_seed_list(a.c.seeds);
  const fs::path root = output_root(a.c.output);
  const auto res = run_teaser(seeds, root, a.opt);
  double fe = 0.0, ft = 0.0;
  std::size_t hit = 0;
  for (const auto& r : res) {
    fe += r.epistemic.gap_fraction();
    ft += r.total.gap_fraction();
    hit += r.total.in_high_noise > 0 ? 1 : 0;
  }
  const double n = static_cast<double>(res.size());
  std::printf("gap fraction: epistemic %.3f, total %.3f; total-LCB in high-noise zone: %zu/%zu seeds\n", fe / n, ft / n,
              hit, res.size());
  std::cout << "csv under " << (root / "teaser").string() << '\n';
  return exit_code::ok;
}

struct ReportArgs {
  Common c;
  std::string metric = "final_regret";
  std::size_t min_seeds = 5;
  std::string scope = "common";
};

int report_cmd(const ReportArgs& a) {
  RankScope scope;
  if (a.scope == "common") scope = RankScope::common;
  else if (a.scope == "available") scope = RankScope::available;
  else throw ConfigError("scope must be common or available");
  const fs::path root = output_root(a.c.output);
  RankTable t;
  try {
    t = aggregate_run_dir(root, a.metric, a.min_seeds, scope);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  for (const auto& w : t.warnings) std::cerr << "warning: " << w << '\n';
  write_text(root / "report" / "ranks.csv", rank_csv(t));
  const std::string text = rank_text(t);
  write_text(root / "report" / "ranks.txt", text);
  std::cout << text;
  return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoupled binned surrogates: experiments and tools"};
  app.require_subcommand(1);

  GenTasksArgs gen;
  auto* g = app.add_subcommand("gen-tasks", "sample synthetic tasks to JSONL");
  add_common(g, gen.c);
  g->add_option("-n,--count", gen.n, "number of tasks");
  g->add_option("--seed", gen.seed, "experiment seed");
  g->add_option("--out", gen.out, "output file");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train an in-context model on prior tasks");
  add_common(t, tr.c);
  t->add_option("--steps", tr.steps, "optimizer steps");
  t->add_option("--seed", tr.seed, "training seed");
  t->add_option("--variant", tr.variant, "decoupled | tuned");
  t->add_option("--out", tr.out, "checkpoint path");
  t->add_option("--log-every", tr.log_every, "progress interval in steps");

  BoArgs bo;
  auto* b = app.add_subcommand("bo-run", "Bayesian optimization sweep over seeds");
  add_common(b, bo.c);
  add_acq(b, bo.o);
  b->add_option("--benchmark", bo.benchmark, "benchmark name");
  b->add_option("--steps", bo.steps, "acquisition steps after the initial design");
  b->add_option("--init", bo.init, "initial design size");

  AlArgs al;
  auto* l = app.add_subcommand("al-run", "pool-based active learning sweep over seeds");
  add_common(l, al.c);
  add_acq(l, al.o);
  l->add_option("--n-acq", al.n_acq, "acquisitions per seed");

  TeaserArgs te;
  auto* d = app.add_subcommand("teaser", "epistemic vs total LCB on the 1D teaser task");
  add_common(d, te.c);
  d->add_option("--selections", te.opt.n_select, "LCB selections per run");
  d->add_option("--grid", te.opt.grid, "candidate grid size");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "rank methods by median final value");
  add_common(r, rep.c);
  r->add_option("--metric", rep.metric, "summary.csv column to rank");
  r->add_option("--min-seeds", rep.min_seeds, "cells with fewer successful seeds are left out");
  r->add_option("--scope", rep.scope, "common | available");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_code::ok : exit_code::config;
  }

  try {
    if (*g) return gen_tasks(gen);
    if (*t) return train_cmd(tr);
    if (*b) return bo_cmd(bo);
    if (*l) return al_cmd(al);
    if (*d) return teaser_cmd(te);
    if (*r) return report_cmd(rep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return exit_code::numeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code::ok;
}
