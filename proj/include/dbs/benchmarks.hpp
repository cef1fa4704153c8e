#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dbs/core/errors.hpp"
#include "dbs/core/matrix.hpp"
#include "dbs/core/rng.hpp"
#include "dbs/task_prior.hpp"

namespace dbs {

namespace fn {

inline double branin(std::span<const double> x) {
  constexpr double pi = std::numbers::pi;
  const double b = 5.1 / (4.0 * pi * pi), c = 5.0 / pi, t = 1.0 / (8.0 * pi);
  const double u = x[1] - b * x[0] * x[0] + c * x[0] - 6.0;
  return u * u + 10.0 * (1.0 - t) * std::cos(x[0]) + 10.0;
}

// Hartmann constants (Dixon & Szego 1978; tables as in Surjanovic & Bingham's
// virtual library). The 4D variant uses the first four columns.
inline constexpr std::array<double, 4> kHartmannAlpha = {1.0, 1.2, 3.0, 3.2};
inline constexpr double kHartmannA[4][6] = {{10, 3, 17, 3.5, 1.7, 8},
                                            {0.05, 10, 17, 0.1, 8, 14},
                                            {3, 3.5, 1.7, 10, 17, 8},
                                            {17, 8, 0.05, 10, 0.1, 14}};
inline constexpr double kHartmannP[4][6] = {{0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886},
                                            {0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991},
                                            {0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650},
                                            {0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381}};

inline double hartmann(std::span<const double> x) {
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - kHartmannP[i][j];
      s += kHartmannA[i][j] * d * d;
    }
    total -= kHartmannAlpha[i] * std::exp(-s);
  }
  return total;
}

/// Ackley with a = 20, b = 0.2, c = 2 pi. Written so the origin gives 0 exactly.
inline double ackley(std::span<const double> x) {
  double sq = 0.0, cs = 0.0;
  for (double v : x) {
    sq += v * v;
    cs += std::cos(2.0 * std::numbers::pi * v);
  }
  const double n = static_cast<double>(x.size());
  const double a = std::exp(-0.2 * std::sqrt(sq / n));
  const double b = std::exp(cs / n);
  return (20.0 - 20.0 * a) + (std::numbers::e - b);
}

}  // namespace fn

struct Evaluation {
  double y;
  double latent;
  bool clamped = false;
};

struct Benchmark {
  std::string name;
  std::vector<double> lo, hi;
  double optimum_value = 0.0;
  std::vector<double> optimum_x;
  double noise_sd = 0.0;
  std::function<double(std::span<const double>)> latent;
  // Heteroscedastic noise sd; overrides noise_sd when set.
  std::function<double(std::span<const double>)> noise_field;

  std::size_t dim() const noexcept { return lo.size(); }

  double noise_sd_at(std::span<const double> x) const { return noise_field ? noise_field(x) : noise_sd; }

  /// Latent value plus noise keyed by (seed, step). Out-of-bounds inputs are
  /// clamped and flagged.
  Evaluation evaluate(std::span<const double> x, std::uint64_t seed, std::uint64_t step) const {
    if (x.size() != dim()) throw DomainError(name + ": expected " + std::to_string(dim()) + " coordinates");
    std::vector<double> xc(x.begin(), x.end());
    Evaluation e{};
    for (std::size_t d = 0; d < xc.size(); ++d) {
      if (std::isnan(xc[d])) throw DomainError(name + ": NaN coordinate");
      if (xc[d] < lo[d] || xc[d] > hi[d]) {
        xc[d] = std::clamp(xc[d], lo[d], hi[d]);
        e.clamped = true;
      }
    }
    e.latent = latent(xc);
    e.y = e.latent;
    if (const double sd = noise_sd_at(xc); sd > 0.0) {
      Rng rng(seed, step, "benchmark-noise");
      e.y += sd * rng.normal();
    }
    return e;
  }
};

// ---------------------------------------------------------------------------
// One-dimensional heteroscedastic task with an unsampled interval.

struct TeaserTask {
  double gap_lo = 0.4;
  double gap_hi = 0.6;
  double low_sd = 0.02;
  double high_sd = 0.3;
  std::size_t n_context = 40;

  static double latent(double x) {
    const auto bump = [x](double c, double w) { return std::exp(-0.5 * (x - c) * (x - c) / (w * w)); };
    return 0.8 * bump(0.15, 0.08) - 0.6 * bump(0.5, 0.06) + 0.3 * bump(0.82, 0.07);
  }

  /// Low noise up to the end of the gap, high noise beyond it.
  double noise_sd(double x) const { return x > gap_hi ? high_sd : low_sd; }
  double noise_var(double x) const { return noise_sd(x) * noise_sd(x); }
  bool in_gap(double x) const { return x >= gap_lo && x <= gap_hi; }
  bool in_high_noise(double x) const { return x > gap_hi; }

  double observe(double x, std::uint64_t seed, std::uint64_t step) const {
    Rng rng(seed, step, "teaser-noise");
    return latent(x) + noise_sd(x) * rng.normal();
  }

  struct Context {
    Matrix x;
    std::vector<double> y;
  };

  /// Stratified context on [0, 1] minus the gap: one uniform point in each
  /// of n_context equal slices of the supported length.
  Context context(std::uint64_t seed) const {
    Rng rng(seed, 0, "teaser-context");
    Context c{Matrix(n_context, 1), {}};
    const double outside = 1.0 - (gap_hi - gap_lo);
    const double slice = outside / static_cast<double>(n_context);
    for (std::size_t i = 0; i < n_context; ++i) {
      double u = slice * (static_cast<double>(i) + rng.uniform());
      if (u >= gap_lo) u += gap_hi - gap_lo;
      if (u <= gap_hi && u >= gap_lo) u = std::nextafter(gap_hi, 2.0);
      c.x(i, 0) = u;
      c.y.push_back(latent(u) + noise_sd(u) * rng.normal());
    }
    return c;
  }
};

inline std::vector<std::string> benchmark_names() {
  return {"branin", "hartmann4", "hartmann6", "ackley", "ackley-noisy", "teaser1d"};
}

inline Benchmark make_benchmark(const std::string& name, double ackley_noise_sd = 0.5) {
  Benchmark b;
  b.name = name;
  if (name == "branin") {
    b.lo = {-5.0, 0.0};
    b.hi = {10.0, 15.0};
    b.optimum_value = 0.39788735772973816;
    b.optimum_x = {std::numbers::pi, 2.275};
    b.latent = fn::branin;
  } else if (name == "hartmann4") {
    b.lo.assign(4, 0.0);
    b.hi.assign(4, 1.0);
    b.optimum_value = -3.7298405844855926;
    b.optimum_x = {0.18739527186826088, 0.19415152650750406, 0.5579177749097255, 0.26477962692322576};
    b.latent = fn::hartmann;
  } else if (name == "hartmann6") {
    b.lo.assign(6, 0.0);
    b.hi.assign(6, 1.0);
    b.optimum_value = -3.322368011415515;
    b.optimum_x = {0.20168951284088166, 0.15001069121573468, 0.47687397552004734,
                   0.2753324309510746,  0.31165161746271286, 0.6573005329659732};
    b.latent = fn::hartmann;
  } else if (name == "ackley" || name == "ackley-noisy") {
    b.lo.assign(2, -4.0);
    b.hi.assign(2, 4.0);
    b.optimum_value = 0.0;
    b.optimum_x = {0.0, 0.0};
    b.latent = fn::ackley;
    if (name == "ackley-noisy") b.noise_sd = ackley_noise_sd;
  } else if (name == "teaser1d") {
    const TeaserTask t;
    b.lo = {0.0};
    b.hi = {1.0};
    b.optimum_value = -0.5999355094895942;
    b.optimum_x = {0.5000148906853711};
    b.latent = [](std::span<const double> x) { return TeaserTask::latent(x[0]); };
    b.noise_field = [t](std::span<const double> x) { return t.noise_sd(x[0]); };
  } else {
    throw ConfigError("unknown benchmark: " + name);
  }
  return b;
}

/// Best latent value so far minus the optimum, floored at zero.
inline double simple_regret(const Benchmark& b, double best_latent) {
  return std::max(0.0, best_latent - b.optimum_value);
}

// ---------------------------------------------------------------------------
// Pool-based active learning data from one large prior task.

struct AlPool {
  Matrix x_pool, x_test;
  std::vector<double> y_pool, f_pool, s2_pool;
  std::vector<double> y_test, f_test, s2_test;
  std::size_t dim = 0;
  bool hetero = false;
};

inline AlPool make_al_pool(TaskPriorConfig cfg, std::size_t n_pool, std::size_t n_test, std::uint64_t seed) {
  if (n_pool < 1 || n_test < 1) throw ConfigError("make_al_pool: pool and test sizes must be >= 1");
  const auto n = static_cast<int>(n_pool + n_test);
  cfg.seq_len_range = {n, n};
  cfg.n_queries = static_cast<int>(n_test);
  const SyntheticTask t = sample_task(cfg, derive_key(seed, 0, hash_tag("al-pool")));
  AlPool p;
  p.dim = t.dim();
  p.hetero = t.hetero_flag;
  std::vector<std::size_t> pool(n_pool), test(n_test);
  for (std::size_t i = 0; i < n_pool; ++i) pool[i] = i;
  for (std::size_t i = 0; i < n_test; ++i) test[i] = n_pool + i;
  p.x_pool = t.X.select_rows(pool);
  p.x_test = t.X.select_rows(test);
  for (auto i : pool) {
    p.y_pool.push_back(t.y[i]);
    p.f_pool.push_back(t.f[i]);
    p.s2_pool.push_back(t.sigma2[i]);
  }
  for (auto i : test) {
    p.y_test.push_back(t.y[i]);
    p.f_test.push_back(t.f[i]);
    p.s2_test.push_back(t.sigma2[i]);
  }
  return p;
}

}  // namespace dbs
