#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "dbs/benchmarks.hpp"
#include "dbs/gp.hpp"
#include "dbs/metrics.hpp"

using namespace dbs;

namespace {

// Reference implementations written from the textbook definitions.
double branin_ref(double x1, double x2) {
  const double a = 1.0, b = 5.1 / (4.0 * M_PI * M_PI), c = 5.0 / M_PI, r = 6.0, s = 10.0, t = 1.0 / (8.0 * M_PI);
  return a * std::pow(x2 - b * x1 * x1 + c * x1 - r, 2) + s * (1.0 - t) * std::cos(x1) + s;
}

double hartmann_ref(const std::vector<double>& x) {
  const double alpha[4] = {1.0, 1.2, 3.0, 3.2};
  const double A[4][6] = {
      {10, 3, 17, 3.50, 1.7, 8}, {0.05, 10, 17, 0.1, 8, 14}, {3, 3.5, 1.7, 10, 17, 8}, {17, 8, 0.05, 10, 0.1, 14}};
  const int P[4][6] = {{1312, 1696, 5569, 124, 8283, 5886},
                       {2329, 4135, 8307, 3736, 1004, 9991},
                       {2348, 1451, 3522, 2883, 3047, 6650},
                       {4047, 8828, 8732, 5743, 1091, 381}};
  double outer = 0.0;
  for (int i = 0; i < 4; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) inner += A[i][j] * std::pow(x[j] - 1e-4 * P[i][j], 2);
    outer += alpha[i] * std::exp(-inner);
  }
  return -outer;
}

double ackley_ref(const std::vector<double>& x) {
  const double a = 20, b = 0.2, c = 2 * M_PI, d = static_cast<double>(x.size());
  double s1 = 0, s2 = 0;
  for (double v : x) {
    s1 += v * v;
    s2 += std::cos(c * v);
  }
  return -a * std::exp(-b * std::sqrt(s1 / d)) - std::exp(s2 / d) + a + std::exp(1.0);
}

// Three Gaussian bumps; the deep one sits inside the unsupported interval.
double teaser_ref(double x) {
  auto g = [x](double c, double w) { return std::exp(-(x - c) * (x - c) / (2.0 * w * w)); };
  return 0.8 * g(0.15, 0.08) - 0.6 * g(0.5, 0.06) + 0.3 * g(0.82, 0.07);
}

std::vector<double> random_point(Rng& rng, const Benchmark& b) {
  std::vector<double> x(b.dim());
  for (std::size_t d = 0; d < x.size(); ++d) x[d] = rng.uniform(b.lo[d], b.hi[d]);
  return x;
}

}  // namespace

TEST(Benchmarks, MatchReferenceFormulas) {
  Rng rng(1, 0, "test");
  for (const auto& name : benchmark_names()) {
    const auto b = make_benchmark(name);
    for (int i = 0; i < 100; ++i) {
      const auto x = random_point(rng, b);
      double want;
      if (name == "branin") want = branin_ref(x[0], x[1]);
      else if (name.starts_with("hartmann")) want = hartmann_ref(x);
      else if (name == "teaser1d") want = teaser_ref(x[0]);
      else want = ackley_ref(x);
      ASSERT_NEAR(b.latent(x), want, 1e-10) << name;
    }
  }
}

TEST(Benchmarks, KnownOptima) {
  for (const auto& name : benchmark_names()) {
    const auto b = make_benchmark(name);
    EXPECT_NEAR(b.latent(b.optimum_x), b.optimum_value, 1e-6) << name;
  }
  EXPECT_NEAR(fn::branin(std::vector<double>{std::numbers::pi, 2.275}), 0.397887, 1e-4);
  EXPECT_NEAR(fn::branin(std::vector<double>{-std::numbers::pi, 12.275}), 0.397887, 1e-4);
  EXPECT_NEAR(fn::branin(std::vector<double>{9.42478, 2.475}), 0.397887, 1e-4);
  EXPECT_EQ(fn::ackley(std::vector<double>{0.0, 0.0}), 0.0);
}

TEST(Benchmarks, OptimaAreLocalMinima) {
  Rng rng(2, 0, "test");
  for (const auto& name : benchmark_names()) {
    const auto b = make_benchmark(name);
    for (int i = 0; i < 200; ++i) {
      auto x = b.optimum_x;
      for (std::size_t d = 0; d < x.size(); ++d) {
        x[d] = std::clamp(x[d] + rng.uniform(-1e-3, 1e-3) * (b.hi[d] - b.lo[d]), b.lo[d], b.hi[d]);
      }
      ASSERT_GE(b.latent(x), b.optimum_value - 1e-12) << name;
    }
  }
}

TEST(Benchmarks, NoiseIsKeyedBySeedAndStep) {
  const auto b = make_benchmark("ackley-noisy");
  const std::vector<double> x = {0.3, -1.2};
  const auto e1 = b.evaluate(x, 4, 17), e2 = b.evaluate(x, 4, 17);
  EXPECT_EQ(e1.y, e2.y);
  EXPECT_NE(e1.y, b.evaluate(x, 4, 18).y);
  EXPECT_NE(e1.y, b.evaluate(x, 5, 17).y);
  EXPECT_EQ(e1.latent, fn::ackley(x));
  EXPECT_NE(e1.y, e1.latent);
  const auto clean = make_benchmark("ackley");
  EXPECT_EQ(clean.evaluate(x, 4, 17).y, fn::ackley(x));
}

TEST(Benchmarks, NoisyAckleyNoiseLevel) {
  const auto b = make_benchmark("ackley-noisy");
  const std::vector<double> x = {1.0, 1.0};
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double e = b.evaluate(x, 1, static_cast<std::uint64_t>(i)).y - fn::ackley(x);
    s += e;
    s2 += e * e;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.5, 0.01);
}

TEST(Benchmarks, ClampsAndRejects) {
  const auto b = make_benchmark("branin");
  const auto e = b.evaluate(std::vector<double>{-7.0, 3.0}, 0, 0);
  EXPECT_TRUE(e.clamped);
  EXPECT_EQ(e.latent, fn::branin(std::vector<double>{-5.0, 3.0}));
  EXPECT_THROW(b.evaluate(std::vector<double>{NAN, 1.0}, 0, 0), DomainError);
  EXPECT_THROW(b.evaluate(std::vector<double>{1.0}, 0, 0), DomainError);
  EXPECT_THROW(make_benchmark("rosenbrock"), ConfigError);
}

TEST(Benchmarks, SimpleRegret) {
  const auto b = make_benchmark("hartmann6");
  EXPECT_EQ(simple_regret(b, b.latent(b.optimum_x)), 0.0);
  EXPECT_NEAR(simple_regret(b, -3.0), 0.322368011415515, 1e-12);
}

// ---------------------------------------------------------------------------
// Teaser

TEST(Teaser, ContextAvoidsGap) {
  const TeaserTask t;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto c = t.context(s);
    ASSERT_EQ(c.x.rows(), 40u);
    for (std::size_t i = 0; i < c.x.rows(); ++i) {
      ASSERT_FALSE(t.in_gap(c.x(i, 0)));
      ASSERT_GE(c.x(i, 0), 0.0);
      ASSERT_LE(c.x(i, 0), 1.0);
    }
  }
}

TEST(Teaser, NoiseRatio) {
  const TeaserTask t;
  EXPECT_DOUBLE_EQ(t.noise_sd(0.9) / t.noise_sd(0.1), 15.0);
  EXPECT_EQ(t.noise_sd(0.2), 0.02);
  EXPECT_EQ(t.noise_sd(0.7), 0.3);
}

TEST(Teaser, BenchmarkUsesTheNoiseField) {
  const auto b = make_benchmark("teaser1d");
  const TeaserTask t;
  for (double x : {0.05, 0.4, 0.65, 0.95}) {
    const double xs[1] = {x};
    EXPECT_EQ(b.noise_sd_at(xs), t.noise_sd(x));
    // Same noise draw, scaled by the local sd.
    const auto e = b.evaluate(xs, 7, 3);
    Rng rng(7, 3, "benchmark-noise");
    EXPECT_DOUBLE_EQ(e.y - e.latent, t.noise_sd(x) * rng.normal());
  }
}

// ---------------------------------------------------------------------------
// AL pool

TEST(AlPool, DeterministicAndDisjoint) {
  TaskPriorConfig cfg;
  cfg.dim_range = {3, 3};
  const auto a = make_al_pool(cfg, 200, 100, 9);
  const auto b = make_al_pool(cfg, 200, 100, 9);
  EXPECT_EQ(a.x_pool, b.x_pool);
  EXPECT_EQ(a.y_test, b.y_test);
  EXPECT_EQ(a.x_pool.rows(), 200u);
  EXPECT_EQ(a.x_test.rows(), 100u);
  std::set<std::vector<double>> pool;
  for (std::size_t i = 0; i < a.x_pool.rows(); ++i) pool.insert({a.x_pool.row(i).begin(), a.x_pool.row(i).end()});
  for (std::size_t i = 0; i < a.x_test.rows(); ++i) {
    EXPECT_FALSE(pool.count({a.x_test.row(i).begin(), a.x_test.row(i).end()}));
  }
  EXPECT_NE(make_al_pool(cfg, 200, 100, 10).x_pool, a.x_pool);
  EXPECT_THROW(make_al_pool(cfg, 0, 10, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, PerfectPointPredictions) {
  std::vector<PointPredictive> p(5);
  std::vector<double> y;
  for (std::size_t i = 0; i < 5; ++i) {
    p[i].mean = 0.3 * static_cast<double>(i);
    p[i].v_tot = 1.0;
    y.push_back(p[i].mean);
  }
  const auto m = compute_metrics(p, y);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_NEAR(m.gaussian_nll, 0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_THROW(compute_metrics(std::vector<PointPredictive>{}, std::vector<double>{}), DomainError);
}

TEST(Metrics, OneHotCrpsWithinHalfBin) {
  const auto g = std::make_shared<const BinGrid>(BinGrid::uniform(-5.0, 5.0, 10));
  Rng rng(3, 0, "test");
  for (int i = 0; i < 200; ++i) {
    const double y = rng.uniform(-5.0, 5.0);
    const double c = crps_binned(*g, BinPMF::one_hot(10, g->bin_index(y)), y);
    ASSERT_GE(c, 0.0);
    ASSERT_LE(c, 0.5);
    // Uniform density on the bin: closed form u^3/3 + (1-u)^3/3.
    const double u = y - g->edges()[g->bin_index(y)];
    ASSERT_NEAR(c, (u * u * u + (1 - u) * (1 - u) * (1 - u)) / 3.0, 1e-12);
  }
}

TEST(Metrics, BinnedCrpsApproachesGaussian) {
  const auto g = std::make_shared<const BinGrid>(BinGrid::uniform(-6.0, 6.0, 999));
  const auto pmf = discretize_gaussian({0.3, 0.64}, *g);
  for (double y : {-1.5, 0.0, 0.3, 1.1, 2.5}) {
    EXPECT_NEAR(crps_binned(*g, pmf, y), crps_gaussian(0.3, 0.64, y), 1e-4) << y;
  }
  // Truth beyond the grid: the outside distance is added.
  const auto narrow = std::make_shared<const BinGrid>(BinGrid::uniform(-1.0, 1.0, 4));
  EXPECT_NEAR(crps_binned(*narrow, BinPMF::one_hot(4, 3), 3.0) - crps_binned(*narrow, BinPMF::one_hot(4, 3), 1.0),
              2.0, 1e-12);
}

TEST(Metrics, CoverageIsCalibrated) {
  const auto g = std::make_shared<const BinGrid>(BinGrid::uniform(-3.0, 3.0, 999));
  const auto pmf = discretize_gaussian({0.0, 1.0}, *g);
  const int n = 100000;
  std::vector<PointPredictive> p(n, PointPredictive{0.0, 0.0, 1.0, 1.0, g, pmf});
  Rng rng(4, 0, "test");
  std::vector<double> y(n);
  for (double& v : y) v = rng.normal();
  const auto m = compute_metrics(p, y);
  EXPECT_GE(m.coverage[2], 0.89);
  EXPECT_LE(m.coverage[2], 0.91);
  EXPECT_NEAR(m.coverage[0], 0.5, 0.01);
  EXPECT_NEAR(m.coverage[3], 0.95, 0.01);
  // Gaussian path on the same draws.
  std::vector<PointPredictive> q(n, PointPredictive{0.0, 0.0, 1.0, 1.0, nullptr, std::nullopt});
  const auto mg = compute_metrics(q, y);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(mg.coverage[c], m.coverage[c], 0.01);
  EXPECT_NEAR(mg.crps, m.crps, 0.01);
}
