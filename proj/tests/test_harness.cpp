#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dbs/harness/al.hpp"
#include "dbs/harness/bo.hpp"
#include "dbs/harness/jsonl.hpp"
#include "dbs/harness/report.hpp"
#include "dbs/harness/teaser.hpp"

using namespace dbs;
using namespace dbs::harness;
using nlohmann::json;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("dbs_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

BoConfig small_bo(const fs::path& root) {
  BoConfig c;
  c.benchmark = "branin";
  c.n_init = 4;
  c.n_steps = 6;
  c.seeds = {0, 1};
  c.acq.sobol_count = 64;
  c.acq.refine_steps = 10;
  c.acq.n_restarts = 2;
  c.output_root = root.string();
  return c;
}

AlConfig small_al(const fs::path& root) {
  AlConfig c;
  c.n_pool = 120;
  c.n_test = 60;
  c.n_init = 10;
  c.n_acq = 12;
  c.cadence = 4;
  c.epig_targets = 20;
  c.surrogate.refit_every = 5;
  c.seeds = {3};
  c.output_root = root.string();
  return c;
}

std::vector<json> lines_of_type(const std::vector<json>& all, const std::string& type) {
  std::vector<json> out;
  for (const auto& l : all) {
    if (l.at("type") == type) out.push_back(l);
  }
  return out;
}

// Keeps the header plus `keep` lines, then appends half of the next line.
void truncate_record(const fs::path& p, std::size_t keep) {
  const std::string text = slurp(p);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < keep + 1; ++i) pos = text.find('\n', pos) + 1;
  const std::size_t next = text.find('\n', pos);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text.substr(0, pos) << text.substr(pos, (next - pos) / 2);
}

}  // namespace

// ---------------------------------------------------------------------------
// Records

TEST(Jsonl, RecoversCompleteLinePrefix) {
  TempDir dir;
  const fs::path p = dir.path() / "r.jsonl";
  {
    JsonlLog log(p);
    log.append({{"a", 1}});
    log.append({{"a", 2}});
  }
  {
    std::ofstream out(p, std::ios::app);
    out << "{\"a\": 3, \"b\"";
  }
  JsonlLog log(p);
  ASSERT_EQ(log.existing().size(), 2u);
  EXPECT_EQ(log.existing()[1].at("a"), 2);
  log.append({{"a", 4}});
  const auto all = read_jsonl(p);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[2].at("a"), 4);
}

TEST(Jsonl, OutputRootPrecedence) {
  ::setenv(kOutputRootEnv, "/tmp/from-env", 1);
  EXPECT_EQ(output_root("explicit"), fs::path("explicit"));
  EXPECT_EQ(output_root(), fs::path("/tmp/from-env"));
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(output_root(), fs::path("out"));
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, RejectsUnknownKeysAndDuplicateSeeds) {
  EXPECT_THROW(bo_config_from_json(json{{"benchmark", "branin"}, {"stepz", 3}}), ConfigError);
  EXPECT_THROW(bo_config_from_json(json{{"acq", {{"rule", "nope"}}}}), ConfigError);
  auto c = bo_config_from_json(json{{"seeds", {1, 1}}});
  EXPECT_THROW(c.validate(), ConfigError);
  c = bo_config_from_json(json{{"seeds", 3}, {"acq", {{"rule", "ts"}, {"source", "total"}}}});
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(c.method_name(), "gp-ts-total");
}

TEST(Config, TunedEpistemicPairingFailsBeforeEvaluation) {
  TempDir dir;
  auto c = small_bo(dir.path());
  c.surrogate.kind = SurrogateKind::tuned_icl;
  c.surrogate.checkpoint = (dir.path() / "missing.json").string();
  c.acq.source = Source::epistemic;
  EXPECT_THROW(run_bo(c), ConfigError);
  EXPECT_FALSE(fs::exists(dir.path() / "runs"));

  auto a = small_al(dir.path());
  a.surrogate = c.surrogate;
  a.acq.rule = AcqRule::bald;
  a.acq.source = Source::total;
  EXPECT_THROW(run_al(a), ConfigError);
  EXPECT_FALSE(fs::exists(dir.path() / "runs"));
}

// ---------------------------------------------------------------------------
// Bayesian optimization

TEST(Bo, RecordShapeAndRegretMonotone) {
  TempDir dir;
  const auto c = small_bo(dir.path());
  const auto out = run_bo(c);
  ASSERT_EQ(out.size(), 2u);
  for (const auto& o : out) {
    ASSERT_TRUE(o.ok) << o.error;
    const auto lines = read_jsonl(run_path(dir.path(), "branin", c.method_name(), o.seed));
    ASSERT_EQ(lines.size(), 1 + c.n_init + c.n_steps + 1);
    EXPECT_EQ(lines.front().at("type"), "header");
    double prev = std::numeric_limits<double>::infinity();
    const auto steps = lines_of_type(lines, "step");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      EXPECT_EQ(steps[i].at("step"), i + 1);
      EXPECT_EQ(steps[i].at("phase"), i < c.n_init ? "init" : "acq");
      const double r = steps[i].at("regret");
      EXPECT_LE(r, prev);
      prev = r;
      EXPECT_FALSE(steps[i].contains("wall_ms"));
    }
    EXPECT_EQ(lines.back().at("final_regret").get<double>(), prev);
  }
  const std::string csv = slurp(run_dir(dir.path(), "branin", c.method_name()) / "summary.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "seed,status,final_regret,n_evals");
}

TEST(Bo, ZeroStepsRecordsOnlyInitialDesign) {
  TempDir dir;
  auto c = small_bo(dir.path());
  c.n_steps = 0;
  c.seeds = {5};
  run_bo(c);
  const auto steps = lines_of_type(read_jsonl(run_path(dir.path(), "branin", c.method_name(), 5)), "step");
  const Matrix init = initial_design(2, c.n_init, 5);
  ASSERT_EQ(steps.size(), c.n_init);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    EXPECT_EQ(steps[i].at("phase"), "init");
    const auto u = steps[i].at("u").get<std::vector<double>>();
    EXPECT_EQ(u[0], init(i, 0));
    EXPECT_EQ(u[1], init(i, 1));
  }
}

TEST(Bo, ReplaysByteIdentically) {
  TempDir a, b;
  run_bo(small_bo(a.path()));
  run_bo(small_bo(b.path()));
  const std::string m = small_bo(a.path()).method_name();
  for (std::uint64_t s : {0, 1}) {
    EXPECT_EQ(slurp(run_path(a.path(), "branin", m, s)), slurp(run_path(b.path(), "branin", m, s)));
  }
}

TEST(Bo, ResumeEqualsUninterrupted) {
  TempDir full, cut;
  const auto cf = small_bo(full.path());
  run_bo(cf);
  const auto cc = small_bo(cut.path());
  run_bo(cc);
  for (std::uint64_t s : {0, 1}) {
    const auto path = run_path(cut.path(), "branin", cc.method_name(), s);
    truncate_record(path, s == 0 ? 2 : 7);
    ASSERT_NE(slurp(path), slurp(run_path(full.path(), "branin", cf.method_name(), s)));
  }
  run_bo(cc);
  for (std::uint64_t s : {0, 1}) {
    EXPECT_EQ(slurp(run_path(cut.path(), "branin", cc.method_name(), s)),
              slurp(run_path(full.path(), "branin", cf.method_name(), s)));
  }
}

TEST(Bo, ResumeRejectsDifferentConfig) {
  TempDir dir;
  auto c = small_bo(dir.path());
  c.seeds = {0};
  c.method = "fixed-name";
  run_bo(c);
  c.n_steps += 1;
  EXPECT_THROW(run_bo(c), ConfigError);
}

TEST(Bo, SharedInitialDesignAcrossMethods) {
  TempDir dir;
  auto gp = small_bo(dir.path());
  gp.benchmark = "ackley-noisy";
  auto rnd = gp;
  rnd.acq.rule = AcqRule::random;
  run_bo(gp);
  run_bo(rnd);
  for (std::uint64_t s : {0, 1}) {
    const auto a = lines_of_type(read_jsonl(run_path(dir.path(), gp.benchmark, gp.method_name(), s)), "step");
    const auto b = lines_of_type(read_jsonl(run_path(dir.path(), rnd.benchmark, rnd.method_name(), s)), "step");
    for (std::size_t i = 0; i < gp.n_init; ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_NE(a.back().at("u"), b.back().at("u"));
  }
}

TEST(Bo, SameQueryAndStepGiveSameNoise) {
  const Benchmark b = make_benchmark("ackley-noisy");
  const std::vector<double> x{0.3, -1.2};
  EXPECT_EQ(b.evaluate(x, 4, 9).y, b.evaluate(x, 4, 9).y);
  EXPECT_NE(b.evaluate(x, 4, 9).y, b.evaluate(x, 4, 10).y);
}

namespace {

// Fails once the context reaches a given size; used to exercise failure isolation.
class FailingSurrogate final : public Surrogate {
 public:
  explicit FailingSurrogate(std::size_t fail_at) : fail_at_(fail_at) {}
  void condition(const Matrix& x, std::span<const double> y, std::span<const double> noise) override {
    if (x.rows() >= fail_at_) throw NumericError("factorization failed");
    gp_.condition(x, y, noise);
  }
  std::vector<PredictiveSummary> summarize(const Matrix& xq, std::span<const double> n) const override {
    return gp_.summarize(xq, n);
  }
  std::vector<DecoupledPrediction> predict(const Matrix& xq, std::span<const double> n) const override {
    return gp_.predict(xq, n);
  }
  bool decoupled() const override { return true; }
  std::string name() const override { return "failing"; }

 private:
  std::size_t fail_at_;
  GpSurrogate gp_;
};

}  // namespace

TEST(Bo, FailedSeedIsRecordedAndOthersContinue) {
  TempDir dir;
  auto c = small_bo(dir.path());
  c.seeds = {0, 1, 2};
  int made = 0;
  const auto out = run_bo(c, [&]() -> std::unique_ptr<Surrogate> {
    // The first instance only answers decoupled(); the second serves seed 0.
    return std::make_unique<FailingSurrogate>(++made == 2 ? 6 : 1000);
  });
  ASSERT_EQ(out.size(), 3u);
  EXPECT_FALSE(out[0].ok);
  EXPECT_NE(out[0].error.find("factorization"), std::string::npos);
  EXPECT_TRUE(out[1].ok);
  EXPECT_TRUE(out[2].ok);
  const auto last = read_jsonl(run_path(dir.path(), "branin", c.method_name(), 0)).back();
  EXPECT_EQ(last.at("status"), "failed");
  EXPECT_EQ(last.at("step"), 7);
  const std::string csv = slurp(run_dir(dir.path(), "branin", c.method_name()) / "summary.csv");
  EXPECT_NE(csv.find("0,failed,nan,6"), std::string::npos) << csv;
}

TEST(Bo, TimingIsOptIn) {
  TempDir dir;
  auto c = small_bo(dir.path());
  c.seeds = {0};
  c.record_timing = true;
  run_bo(c);
  for (const auto& s : lines_of_type(read_jsonl(run_path(dir.path(), "branin", c.method_name(), 0)), "step")) {
    EXPECT_GE(s.at("wall_ms").get<double>(), 0.0);
  }
}

TEST(Bo, HeteroscedasticTeaserBenchmarkRuns) {
  TempDir dir;
  auto c = small_bo(dir.path());
  c.benchmark = "teaser1d";
  c.seeds = {0};
  const auto out = run_bo(c);
  ASSERT_TRUE(out[0].ok) << out[0].error;
  EXPECT_GE(out[0].final_value, 0.0);
}

// ---------------------------------------------------------------------------
// Active learning

TEST(Al, WarmStartSharedAcrossMethods) {
  TempDir dir;
  auto var = small_al(dir.path());
  auto rnd = var;
  rnd.acq.rule = AcqRule::random;
  run_al(var);
  run_al(rnd);
  const auto a = read_jsonl(run_path(dir.path(), var.pool_name, var.method_name(), 3)).front();
  const auto b = read_jsonl(run_path(dir.path(), rnd.pool_name, rnd.method_name(), 3)).front();
  EXPECT_EQ(a.at("warm_start"), b.at("warm_start"));
  EXPECT_EQ(a.at("warm_start").size(), var.n_init);
  EXPECT_NE(warm_start_indices(var.n_pool, var.n_init, 3), warm_start_indices(var.n_pool, var.n_init, 4));
}

TEST(Al, MetricCadenceAndSummary) {
  TempDir dir;
  auto c = small_al(dir.path());
  c.n_acq = 10;
  const auto out = run_al(c);
  ASSERT_TRUE(out[0].ok) << out[0].error;
  const auto lines = read_jsonl(run_path(dir.path(), c.pool_name, c.method_name(), 3));
  std::vector<std::size_t> at;
  for (const auto& m : lines_of_type(lines, "metrics")) {
    at.push_back(m.at("step"));
    for (const char* k : {"cov50", "cov80", "cov90", "cov95"}) {
      EXPECT_GE(m.at(k).get<double>(), 0.0);
      EXPECT_LE(m.at(k).get<double>(), 1.0);
    }
    EXPECT_EQ(m.at("n_labeled"), c.n_init + m.at("step").get<std::size_t>());
  }
  EXPECT_EQ(at, (std::vector<std::size_t>{0, 4, 8, 10}));
  std::set<std::size_t> picked;
  for (const auto& s : lines_of_type(lines, "step")) picked.insert(s.at("index").get<std::size_t>());
  EXPECT_EQ(picked.size(), c.n_acq);
  EXPECT_EQ(lines.back().at("final_rmse"), lines_of_type(lines, "metrics").back().at("rmse"));
}

TEST(Al, ZeroAcquisitionsGiveWarmStartMetrics) {
  TempDir a, b;
  auto c0 = small_al(a.path());
  c0.n_acq = 0;
  auto c1 = small_al(b.path());
  run_al(c0);
  run_al(c1);
  const auto l0 = read_jsonl(run_path(a.path(), c0.pool_name, c0.method_name(), 3));
  const auto l1 = read_jsonl(run_path(b.path(), c1.pool_name, c1.method_name(), 3));
  ASSERT_EQ(l0.size(), 3u);
  EXPECT_EQ(l0[1], lines_of_type(l1, "metrics").front());
  EXPECT_EQ(l0.back().at("final_rmse"), l0[1].at("rmse"));
}

TEST(Al, ResumeEqualsUninterruptedWithStatefulRefits) {
  for (auto rule : {AcqRule::var, AcqRule::bald, AcqRule::epig, AcqRule::random}) {
    TempDir full, cut;
    auto cf = small_al(full.path());
    cf.acq.rule = rule;
    auto cc = cf;
    cc.output_root = cut.path().string();
    run_al(cf);
    run_al(cc);
    const auto path = run_path(cut.path(), cc.pool_name, cc.method_name(), 3);
    truncate_record(path, 9);
    run_al(cc);
    EXPECT_EQ(slurp(path), slurp(run_path(full.path(), cf.pool_name, cf.method_name(), 3))) << to_string(rule);
  }
}

TEST(Al, PoolExhaustionIsAConfigError) {
  TempDir dir;
  auto c = small_al(dir.path());
  c.n_acq = c.n_pool - c.n_init + 1;
  EXPECT_THROW(run_al(c), ConfigError);
  EXPECT_FALSE(fs::exists(dir.path() / "runs"));
}

// ---------------------------------------------------------------------------
// Teaser

TEST(Teaser, DeterministicAndPlotReady) {
  TeaserOptions opt;
  opt.n_select = 5;
  const auto a = teaser_demo(2, opt);
  const auto b = teaser_demo(2, opt);
  EXPECT_EQ(a.epistemic.x, b.epistemic.x);
  EXPECT_EQ(a.total.y, b.total.y);
  EXPECT_EQ(a.curve_csv, b.curve_csv);
  EXPECT_EQ(a.curve_csv.substr(0, a.curve_csv.find('\n')), "x,latent,mean,epi_lo,epi_hi,noise_lo,noise_hi,in_gap");
  EXPECT_EQ(std::count(a.curve_csv.begin(), a.curve_csv.end(), '\n'), 513);
  EXPECT_EQ(std::count(a.points_csv.begin(), a.points_csv.end(), '\n'), 1 + 40 + 10);
}

// ---------------------------------------------------------------------------
// Rank aggregation

TEST(Ranks, BetterOnBothBenchmarks) {
  const auto t = aggregate_ranks({"A", "B"}, {"b1", "b2"}, {{0.1, 0.2}, {0.3, 0.4}});
  EXPECT_DOUBLE_EQ(*t.avg_rank[0], 1.0);
  EXPECT_DOUBLE_EQ(*t.avg_rank[1], 2.0);
}

TEST(Ranks, ExactTieSharesAverageRank) {
  const auto t = aggregate_ranks({"A", "B", "C"}, {"b1"}, {{0.5}, {0.5}, {0.1}});
  EXPECT_DOUBLE_EQ(*t.rank[0][0], 2.5);
  EXPECT_DOUBLE_EQ(*t.rank[1][0], 2.5);
  EXPECT_DOUBLE_EQ(*t.rank[2][0], 1.0);
  EXPECT_EQ(average_ranks({3, 1, 3, 3}), (std::vector<double>{3, 1, 3, 3}));
}

TEST(Ranks, MismatchedBenchmarksUseCommonSubset) {
  const auto t = aggregate_ranks({"A", "B"}, {"b1", "b2"}, {{0.1, std::nullopt}, {0.3, 0.0}});
  EXPECT_DOUBLE_EQ(*t.avg_rank[0], 1.0);
  EXPECT_DOUBLE_EQ(*t.avg_rank[1], 2.0);
  EXPECT_FALSE(t.rank[1][1].has_value());
  ASSERT_EQ(t.warnings.size(), 1u);
  const auto avail = aggregate_ranks({"A", "B"}, {"b1", "b2"}, {{0.1, std::nullopt}, {0.3, 0.0}}, RankScope::available);
  EXPECT_DOUBLE_EQ(*avail.avg_rank[1], 2.0);  // b2 has B alone and does not count
  EXPECT_FALSE(avail.rank[1][1].has_value());
  EXPECT_THROW(aggregate_ranks({"A", "B"}, {"b1"}, {{0.1}, {std::nullopt}}), DomainError);
  EXPECT_THROW(aggregate_ranks({"A", "B"}, {"b1"}, {{0.1}, {std::nullopt}}, RankScope::available), DomainError);
}

TEST(Ranks, NoCompleteBenchmarkOnlyRanksUnderAvailableScope) {
  // C has results only on b2, where it is alone, so it stays unranked.
  const std::vector<std::vector<std::optional<double>>> v = {{0.1, std::nullopt}, {0.3, std::nullopt}, {std::nullopt, 0.2}};
  EXPECT_THROW(aggregate_ranks({"A", "B", "C"}, {"b1", "b2"}, v), DomainError);
  const auto t = aggregate_ranks({"A", "B", "C"}, {"b1", "b2"}, v, RankScope::available);
  EXPECT_DOUBLE_EQ(*t.avg_rank[0], 1.0);
  EXPECT_DOUBLE_EQ(*t.avg_rank[1], 2.0);
  EXPECT_FALSE(t.avg_rank[2].has_value());
}

TEST(Ranks, ReadsSummariesAndDropsThinCells) {
  TempDir dir;
  const auto put = [&](const std::string& b, const std::string& m, const std::vector<double>& v, std::size_t failed) {
    std::ostringstream s;
    s << "seed,status,final_regret,n_evals\n";
    for (std::size_t i = 0; i < v.size(); ++i) s << i << ",ok," << v[i] << ",10\n";
    for (std::size_t i = 0; i < failed; ++i) s << v.size() + i << ",failed,nan,3\n";
    write_text(run_dir(dir.path(), b, m) / "summary.csv", s.str());
  };
  put("branin", "gp", {0.1, 0.2, 0.3, 0.4, 0.5}, 0);
  put("branin", "random", {1, 2, 3, 4, 5, 6}, 0);
  put("ackley", "gp", {1, 1, 1, 1}, 6);
  put("ackley", "random", {2, 2, 2, 2, 2}, 0);
  const auto t = aggregate_run_dir(dir.path());
  ASSERT_EQ(t.methods, (std::vector<std::string>{"gp", "random"}));
  ASSERT_EQ(t.benchmarks, (std::vector<std::string>{"ackley", "branin"}));
  EXPECT_DOUBLE_EQ(*t.value[0][1], 0.3);
  EXPECT_DOUBLE_EQ(*t.value[1][1], 3.5);
  EXPECT_FALSE(t.value[0][0].has_value());
  EXPECT_EQ(t.n_seeds[0][0], 4u);
  EXPECT_DOUBLE_EQ(*t.avg_rank[0], 1.0);
  EXPECT_EQ(t.warnings.size(), 2u);
  EXPECT_NE(rank_text(t).find("--"), std::string::npos);
  EXPECT_EQ(rank_csv(t).substr(0, rank_csv(t).find('\n')),
            "method,ackley_median,ackley_rank,branin_median,branin_rank,avg_rank");
}
