#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dbs/bins.hpp"
#include "test_util.hpp"

namespace dbs {
namespace {

double phi_cdf(double z) { return 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2)); }

TEST(BuildGrid, SplitsUnitIntervalInTwo) {
  const BinGrid g = build_grid(0.0, 1.0, 2);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_DOUBLE_EQ(g.edges()[0], 0.0);
  EXPECT_DOUBLE_EQ(g.edges()[1], 0.5);
  EXPECT_DOUBLE_EQ(g.edges()[2], 1.0);
  EXPECT_DOUBLE_EQ(g.centers()[0], 0.25);
  EXPECT_DOUBLE_EQ(g.centers()[1], 0.75);
}

TEST(BuildGrid, NineHundredNinetyNineBins) {
  const BinGrid g = build_grid(-3.0, 3.0, 999);
  ASSERT_EQ(g.size(), 999u);
  for (double w : g.widths()) EXPECT_NEAR(w, 6.0 / 999.0, 1e-14);
  for (std::size_t j = 0; j < g.size(); ++j) {
    EXPECT_DOUBLE_EQ(g.centers()[j], 0.5 * (g.edges()[j] + g.edges()[j + 1]));
  }
  EXPECT_TRUE(g.is_uniform());
}

TEST(BuildGrid, RejectsDegenerateInput) {
  EXPECT_THROW(build_grid(0.0, 1.0, 1), DomainError);
  EXPECT_THROW(build_grid(1.0, 1.0, 4), DomainError);
  EXPECT_THROW(build_grid(2.0, 1.0, 4), DomainError);
  EXPECT_THROW(BinGrid({0.0, 1.0, 1.0}), DomainError);
}

TEST(BuildGrid, SymmetricGridIsExactlyAntisymmetric) {
  const BinGrid g = build_grid(-3.0, 3.0, 64);
  for (std::size_t k = 0; k <= 64; ++k) EXPECT_EQ(g.edges()[k], -g.edges()[64 - k]);
}

TEST(BinIndex, BoundaryConventionAndClamping) {
  const BinGrid g({0.0, 0.5, 1.0});
  EXPECT_EQ(g.bin_index(0.25), 0u);
  EXPECT_EQ(g.bin_index(0.5), 1u);  // right-open
  EXPECT_EQ(g.bin_index(1.0), 1u);  // last bin right-closed
  EXPECT_EQ(g.bin_index(7.0), 1u);
  EXPECT_EQ(g.bin_index(-7.0), 0u);
  EXPECT_THROW(g.bin_index(std::nan("")), DomainError);
}

TEST(TransitionRow, VanishingNoiseIsOneHot) {
  const BinGrid g = build_grid(-1.0, 1.0, 10);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const auto row = transition_row(g, j, 1e-16);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(row[k], k == j ? 1.0 : 0.0, 1e-6);
  }
}

TEST(TransitionRow, MatchesDirectCdfDifferences) {
  const BinGrid g({-1.0, 0.0, 1.0});
  const auto row = transition_row(g, 0, 0.25);
  const double m0 = phi_cdf(1.0) - phi_cdf(-1.0);
  const double m1 = phi_cdf(3.0) - phi_cdf(1.0);
  EXPECT_NEAR(row[0], m0 / (m0 + m1), 1e-15);
  EXPECT_NEAR(row[1], m1 / (m0 + m1), 1e-15);
}

TEST(TransitionRow, NonUniformGridMatchesDirectCdf) {
  const BinGrid g({-2.0, -0.5, 0.1, 0.2, 1.5});
  const double var = 0.3, sd = std::sqrt(var);
  const std::size_t j = 2;
  const double c = g.center(j);
  std::vector<double> raw(4);
  double total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    raw[k] = phi_cdf((g.edges()[k + 1] - c) / sd) - phi_cdf((g.edges()[k] - c) / sd);
    total += raw[k];
  }
  const auto row = transition_row(g, j, var);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(row[k], raw[k] / total, 1e-14);
}

TEST(TransitionRow, SymmetricAboutCenterBin) {
  const BinGrid g = build_grid(-3.0, 3.0, 9);
  for (double var : {1e-3, 0.1, 1.0, 7.5}) {
    const auto row = transition_row(g, 4, var);
    for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(row[k], row[8 - k], 1e-12);
  }
}

TEST(TransitionRow, RejectsNonPositiveNoise) {
  const BinGrid g = build_grid(0.0, 1.0, 4);
  EXPECT_THROW(transition_row(g, 0, 0.0), DomainError);
  EXPECT_THROW(transition_row(g, 0, -1.0), DomainError);
}

TEST(TransitionRow, RowsAreStochasticProperty) {
  Rng rng(7, 0, "rows");
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 2 + rng.index(80);
    const double lo = rng.uniform(-5.0, 0.0);
    const BinGrid g = build_grid(lo, lo + rng.uniform(0.1, 10.0), k);
    const double var = rng.log_uniform(1e-6, 10.0);
    const TransitionMatrix t(g, var);
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (double v : t.row(j)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(TransitionMatrix, DerivativeMatchesFiniteDifference) {
  const BinGrid uniform = build_grid(-3.0, 3.0, 16);
  const BinGrid ragged({-2.0, -1.1, -0.3, 0.0, 0.4, 1.7, 2.5});
  for (const BinGrid* g : {&uniform, &ragged}) {
    for (double sigma : {0.05, 0.4, 2.0}) {
      const TransitionMatrix t(*g, sigma * sigma, true);
      const double h = 1e-6 * sigma;
      const TransitionMatrix tp(*g, (sigma + h) * (sigma + h));
      const TransitionMatrix tm(*g, (sigma - h) * (sigma - h));
      for (std::size_t j = 0; j < g->size(); ++j) {
        for (std::size_t k = 0; k < g->size(); ++k) {
          const double fd = (tp(j, k) - tm(j, k)) / (2 * h);
          EXPECT_NEAR(t.dsigma(j, k), fd, 1e-6 * (1.0 + std::abs(fd)));
        }
      }
    }
  }
}

TEST(Convolve, PointMassLatentGivesTransitionRow) {
  const BinGrid g = build_grid(-2.0, 2.0, 12);
  const BinPMF out = convolve(g, BinPMF::one_hot(12, 5), 0.2);
  const auto row = transition_row(g, 5, 0.2);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_DOUBLE_EQ(out[k], row[k]);
}

TEST(Convolve, VanishingNoiseLeavesLatentUnchanged) {
  const BinGrid g = build_grid(-2.0, 2.0, 20);
  const BinPMF latent = BinPMF::uniform(20);
  EXPECT_LT(total_variation(convolve(g, latent, 1e-14), latent), 1e-6);
}

TEST(Convolve, MatchesMonteCarloHistogram) {
  const BinGrid g = build_grid(-3.0, 3.0, 64);
  Rng rng(11, 0, "mc-pairs");
  for (int trial = 0; trial < 3; ++trial) {
    const double var = rng.log_uniform(1e-4, 0.25);
    const BinPMF latent = testing::random_interior_pmf(rng, g, 4.0 * std::sqrt(var));
    const auto hist = testing::monte_carlo_convolution(g, latent, var, 1'000'000, trial);
    EXPECT_LT(total_variation(convolve(g, latent, var).probs(), hist), 0.01);
  }
}

TEST(Convolve, OutputIsValidPmfProperty) {
  Rng rng(3, 0, "conv-valid");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.index(100);
    const BinGrid g = build_grid(-3.0, 3.0, k);
    const BinPMF latent = testing::random_pmf(rng, k);
    const double var = rng.log_uniform(1e-6, 10.0);
    EXPECT_NO_THROW({
      const BinPMF out = convolve(g, latent, var);
      EXPECT_EQ(out.size(), k);
    });
  }
}

// Truncation to the grid pulls boundary rows inward, so monotonicity is only
// guaranteed while the latent mass stays 3 sd away from both grid ends.
TEST(Convolve, VarianceMonotoneInNoiseProperty) {
  const BinGrid g = build_grid(-3.0, 3.0, 64);
  Rng rng(5, 0, "conv-monotone");
  const std::vector<double> ladder{1e-6, 1e-4, 1e-3, 0.01, 0.03, 0.1, 0.2};
  for (int trial = 0; trial < 30; ++trial) {
    const BinPMF latent = testing::random_interior_pmf(rng, g, 3.0 * std::sqrt(ladder.back()));
    double prev = pmf_mean_var(g, latent).variance;
    for (double var : ladder) {
      const double v = pmf_mean_var(g, convolve(g, latent, var)).variance;
      EXPECT_GE(v, prev - 1e-12);
      prev = v;
    }
  }
}

TEST(Convolve, InteriorLatentsGainVarianceAndKeepTheirMean) {
  const BinGrid g = build_grid(-3.0, 3.0, 64);
  Rng rng(9, 0, "conv-interior");
  for (int trial = 0; trial < 100; ++trial) {
    const double var = rng.log_uniform(1e-6, 0.3);
    const BinPMF latent = testing::random_interior_pmf(rng, g, 3.0 * std::sqrt(var));
    const auto before = pmf_mean_var(g, latent);
    const auto after = pmf_mean_var(g, convolve(g, latent, var));
    EXPECT_GE(after.variance, before.variance - 1e-12);
    EXPECT_LT(std::abs(after.mean - before.mean), 0.5 * g.max_width());
  }
}

TEST(PmfMeanVar, Examples) {
  const BinGrid g = build_grid(-1.0, 1.0, 8);
  const auto one_hot = pmf_mean_var(g, BinPMF::one_hot(8, 2));
  EXPECT_DOUBLE_EQ(one_hot.mean, g.center(2));
  EXPECT_DOUBLE_EQ(one_hot.variance, kVarianceFloor);
  EXPECT_NEAR(pmf_mean_var(g, BinPMF::uniform(8)).mean, 0.0, 1e-15);

  const BinGrid two({-2.0, 0.0, 2.0});
  const auto m = pmf_mean_var(two, BinPMF({0.5, 0.5}));
  EXPECT_DOUBLE_EQ(m.mean, 0.0);
  EXPECT_DOUBLE_EQ(m.variance, 1.0);
}

TEST(BarNll, Examples) {
  const std::size_t k = 10;
  const BinGrid unit = build_grid(0.0, 10.0, k);
  EXPECT_NEAR(bar_nll(unit, BinPMF::uniform(k), 3.3), std::log(10.0), 1e-12);
  EXPECT_DOUBLE_EQ(bar_nll(unit, BinPMF::one_hot(k, 3), 3.5), 0.0);

  const BinGrid halves = build_grid(0.0, 5.0, k);
  EXPECT_DOUBLE_EQ(bar_nll(halves, BinPMF::one_hot(k, 3), 4.2),
                   -std::log(kTransitionFloor) + std::log(0.5));
}

TEST(BarNll, GroundTruthIsOptimalProperty) {
  const BinGrid g = build_grid(-2.0, 2.0, 16);
  Rng rng(13, 0, "proper");
  auto expected_nll = [&](const BinPMF& truth, const BinPMF& model) {
    double e = 0.0;
    for (std::size_t k = 0; k < 16; ++k) e += truth[k] * bar_nll(g, model, g.center(k));
    return e;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const BinPMF truth = testing::random_pmf(rng, 16);
    const double best = expected_nll(truth, truth);
    for (int p = 0; p < 20; ++p) {
      std::vector<double> q(truth.probs().begin(), truth.probs().end());
      double s = 0.0;
      for (double& v : q) s += (v *= std::exp(rng.normal(0.0, 0.3)));
      for (double& v : q) v /= s;
      EXPECT_LT(best, expected_nll(truth, BinPMF(q)));
    }
  }
}

TEST(LatentCatNll, Examples) {
  const BinGrid g = build_grid(0.0, 8.0, 8);
  EXPECT_NEAR(latent_cat_nll(g, BinPMF::uniform(8), 2.2), std::log(8.0), 1e-12);
  EXPECT_DOUBLE_EQ(latent_cat_nll(g, BinPMF::one_hot(8, 2), 2.2), 0.0);
  std::vector<double> p(8, 0.5 / 7.0);
  p[2] = 0.5;
  EXPECT_NEAR(latent_cat_nll(g, BinPMF(p), 2.2), std::log(2.0), 1e-12);
}

TEST(LogVarLoss, Examples) {
  EXPECT_DOUBLE_EQ(log_var_loss(0.3, 0.3), 0.0);
  EXPECT_NEAR(log_var_loss(std::numbers::e * 0.3, 0.3), 1.0, 1e-12);
  EXPECT_NEAR(log_var_loss(0.01, 1.0), 21.20759244, 1e-8);
  EXPECT_THROW(log_var_loss(0.0, 1.0), DomainError);
  EXPECT_THROW(log_var_loss(1.0, -1.0), DomainError);
}

TEST(TotalLoss, DefaultsAndReductions) {
  const LossWeights defaults;
  EXPECT_EQ(defaults.lambda_y, 1.0);
  EXPECT_EQ(defaults.lambda_f, 1.0);
  EXPECT_EQ(defaults.lambda_sigma, 0.1);

  const BinGrid g = build_grid(-2.0, 2.0, 16);
  Rng rng(1, 0, "total");
  const BinPMF latent = testing::random_pmf(rng, 16);
  EXPECT_DOUBLE_EQ(total_loss(g, latent, 0.2, 0.4, -0.3, 0.1, LossWeights{0.0, 1.0, 0.0}),
                   latent_cat_nll(g, latent, -0.3));

  const double composed = bar_nll(g, convolve(g, latent, 0.2), 0.4) +
                          latent_cat_nll(g, latent, -0.3) + 0.1 * log_var_loss(0.2, 0.1);
  EXPECT_NEAR(total_loss(g, latent, 0.2, 0.4, -0.3, 0.1, defaults), composed, 1e-12);
}

TEST(TotalLoss, PerfectPredictionIsNearZero) {
  const BinGrid unit = build_grid(0.0, 10.0, 10);
  const double loss = total_loss(unit, BinPMF::one_hot(10, 4), 1e-10, 4.5, 4.5, 1e-10, LossWeights{});
  EXPECT_NEAR(loss, 0.0, 1e-9);
}

TEST(DecomposeGaussian, Examples) {
  const auto [latent, noise] = decompose_gaussian({0.0, 1.0}, 0.5);
  EXPECT_EQ(latent.mean, 0.0);
  EXPECT_EQ(latent.variance, 0.5);
  EXPECT_EQ(noise, 0.5);

  const auto [l2, n2] = decompose_gaussian({2.0, 4.0}, 1.0);
  EXPECT_EQ(l2.mean, 2.0);
  EXPECT_EQ(l2.variance, 1.0);
  EXPECT_EQ(n2, 3.0);
  EXPECT_EQ(l2.variance + n2, 4.0);

  EXPECT_THROW(decompose_gaussian({0.0, 1.0}, 0.0), DomainError);
  EXPECT_THROW(decompose_gaussian({0.0, 1.0}, 1.0), DomainError);
}

TEST(DecomposeGaussian, SplitsShareObservationPmf) {
  const double m = 0.7, s2 = 2.0, s = std::sqrt(s2);
  const BinGrid g = build_grid(m - 6 * s, m + 6 * s, 999);
  auto observation = [&](double a) {
    const auto [latent, noise] = decompose_gaussian({m, s2}, a);
    std::vector<double> pi(999);
    double tot = 0.0;
    for (std::size_t j = 0; j < 999; ++j) {
      pi[j] = normal::interval_mass((g.edges()[j] - m) / std::sqrt(latent.variance),
                                    (g.edges()[j + 1] - m) / std::sqrt(latent.variance));
      tot += pi[j];
    }
    for (double& v : pi) v /= tot;
    return convolve(g, BinPMF(pi), noise);
  };
  EXPECT_LT(total_variation(observation(0.2), observation(1.7)), 0.005);
}

TEST(BinJson, RoundTrip) {
  const BinGrid g({-1.0, 0.25, 2.0});
  const nlohmann::json jg = g;
  EXPECT_EQ(jg.dump(), R"({"edges":[-1.0,0.25,2.0]})");
  EXPECT_EQ(jg.get<BinGrid>(), g);
  const BinPMF p({0.25, 0.75});
  const nlohmann::json jp = p;
  EXPECT_EQ(jp.get<BinPMF>(), p);
  EXPECT_THROW(nlohmann::json::parse(R"({"probs":[0.5,0.6]})").get<BinPMF>(), DomainError);
}

}  // namespace
}  // namespace dbs
