#pragma once

// A prior with two hypotheses whose posterior is available by enumeration:
// A has latent +0.5 and noise 0.25 exp(x/2), B has latent -0.5 and noise
// 0.5 exp(-x/2), x ~ U[-1, 1], three context points.

#include <cmath>
#include <numbers>
#include <vector>

#include "dbs/bins.hpp"
#include "dbs/core/rng.hpp"
#include "dbs/icl/model.hpp"

namespace dbs::icl {

struct TwoHypothesisPrior {
  double f_a = 0.5;
  double f_b = -0.5;
  std::size_t n_context = 3;
  std::size_t n_queries = 8;

  double noise_var(bool a, double x) const {
    return a ? 0.25 * std::exp(0.5 * x) : 0.5 * std::exp(-0.5 * x);
  }

  TrainTask sample(std::uint64_t seed) const {
    Rng rng(seed, 0, "two-hypothesis");
    const bool a = rng.bernoulli(0.5);
    const double f = a ? f_a : f_b;
    TrainTask t;
    t.seed = seed;
    t.x_ctx = Matrix(n_context, 1);
    t.x_qry = Matrix(n_queries, 1);
    for (std::size_t i = 0; i < n_context; ++i) {
      const double x = rng.uniform(-1.0, 1.0);
      t.x_ctx(i, 0) = x;
      t.y_ctx.push_back(f + std::sqrt(noise_var(a, x)) * rng.normal());
    }
    for (std::size_t i = 0; i < n_queries; ++i) {
      const double x = rng.uniform(-1.0, 1.0);
      t.x_qry(i, 0) = x;
      t.f_qry.push_back(f);
      t.sigma2_qry.push_back(noise_var(a, x));
      t.y_qry.push_back(f + std::sqrt(t.sigma2_qry.back()) * rng.normal());
    }
    return t;
  }

  /// P(A | context) by Bayes' rule with a uniform prior.
  double posterior_a(const Matrix& x, std::span<const double> y) const {
    double log_ratio = 0.0;  // log p(D|A) - log p(D|B)
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double va = noise_var(true, x(i, 0)), vb = noise_var(false, x(i, 0));
      log_ratio += -0.5 * std::log(va) - 0.5 * (y[i] - f_a) * (y[i] - f_a) / va;
      log_ratio -= -0.5 * std::log(vb) - 0.5 * (y[i] - f_b) * (y[i] - f_b) / vb;
    }
    return 1.0 / (1.0 + std::exp(-log_ratio));
  }

  /// Exact conditional of the latent bin given the context.
  std::vector<double> latent_bin_posterior(const BinGrid& grid, double p_a) const {
    std::vector<double> p(grid.size(), 0.0);
    p[grid.bin_index(f_a)] += p_a;
    p[grid.bin_index(f_b)] += 1.0 - p_a;
    return p;
  }

  double expected_log_noise(double p_a, double xq) const {
    return p_a * std::log(noise_var(true, xq)) + (1.0 - p_a) * std::log(noise_var(false, xq));
  }

  /// Variance of the bin-center-discretized latent given the context.
  double latent_variance(const BinGrid& grid, double p_a) const {
    const double gap = grid.center(grid.bin_index(f_a)) - grid.center(grid.bin_index(f_b));
    return p_a * (1.0 - p_a) * gap * gap;
  }
};

struct ConsistencyReport {
  double mean_tv = 0.0;
  double mean_log_var_gap = 0.0;
  // sum |model variance - exact variance| / sum exact variance
  double rel_var_gap = 0.0;
};

/// Compares a decoupled model with the enumerated posterior on n_contexts
/// fresh contexts (all query points of each).
inline ConsistencyReport consistency_report(const Model& model, const TwoHypothesisPrior& prior,
                                            std::size_t n_contexts, std::uint64_t seed) {
  ConsistencyReport r;
  const BinGrid& grid = *model.grid();
  std::size_t count = 0;
  double var_err = 0.0, var_total = 0.0;
  for (std::size_t c = 0; c < n_contexts; ++c) {
    const TrainTask t = prior.sample(derive_key(seed, c, hash_tag("two-hypothesis-eval")));
    const double p_a = prior.posterior_a(t.x_ctx, t.y_ctx);
    const auto truth = prior.latent_bin_posterior(grid, p_a);
    const double true_var = prior.latent_variance(grid, p_a);
    const auto out = model.forward(t.x_ctx, t.y_ctx, t.x_qry);
    for (std::size_t q = 0; q < out.size(); ++q) {
      const BinPMF pi = BinPMF::from_logits<double>(out[q].latent_logits);
      r.mean_tv += total_variation(pi.probs(), truth);
      r.mean_log_var_gap += std::abs(out[q].log_noise_var - prior.expected_log_noise(p_a, t.x_qry(q, 0)));
      var_err += std::abs(pmf_mean_var(grid, pi).variance - true_var);
      var_total += true_var;
      ++count;
    }
  }
  r.mean_tv /= static_cast<double>(count);
  r.mean_log_var_gap /= static_cast<double>(count);
  r.rel_var_gap = var_err / var_total;
  return r;
}

}  // namespace dbs::icl
