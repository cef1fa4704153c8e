#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "dbs/bins.hpp"
#include "dbs/core/errors.hpp"
#include "dbs/core/normal.hpp"
#include "json.hpp"

namespace dbs {

inline constexpr std::array<double, 4> kCoverageLevels = {0.5, 0.8, 0.9, 0.95};

/// Predictive at one test point: Gaussian moments, plus the binned
/// observation PMF when the surrogate produces one.
struct PointPredictive {
  double mean = 0.0;
  double v_epi = 0.0;
  double v_ale = 0.0;
  double v_tot = 1.0;
  std::shared_ptr<const BinGrid> grid;
  std::optional<BinPMF> pmf;
};

struct MetricsBundle {
  double rmse = 0.0;
  double mae = 0.0;
  double gaussian_nll = 0.0;
  double crps = 0.0;
  std::array<double, 4> coverage{};
  double mean_v_epi = 0.0;
  double mean_v_ale = 0.0;
  double mean_v_tot = 0.0;
  std::size_t n = 0;
};

namespace detail {

// Integral over [0, w] of (p0 + (p1 - p0) t / w - ind(t))^2 where
// ind(t) = 1 for t >= u (u clamped to [0, w]).
inline double linear_cdf_sq(double p0, double p1, double w, double u) {
  const auto seg = [&](double a, double b, double shift) {
    // integral over [a, b] of (p0 - shift + (p1 - p0) t / w)^2
    const double s = (p1 - p0) / w;
    const double c = p0 - shift;
    return c * c * (b - a) + c * s * (b * b - a * a) + s * s * (b * b * b - a * a * a) / 3.0;
  };
  u = std::clamp(u, 0.0, w);
  return seg(0.0, u, 0.0) + seg(u, w, 1.0);
}

}  // namespace detail

/// CRPS of a binned predictive whose CDF is linear inside each bin (uniform
/// mass per bin). Truth outside the grid adds the distance to the nearest edge.
inline double crps_binned(const BinGrid& grid, const BinPMF& pmf, double y) {
  const auto e = grid.edges();
  double total = 0.0, cdf = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    const double next = std::min(1.0, cdf + pmf[k]);
    total += detail::linear_cdf_sq(cdf, next, e[k + 1] - e[k], y - e[k]);
    cdf = next;
  }
  if (y < grid.lo()) total += grid.lo() - y;
  if (y > grid.hi()) total += y - grid.hi();
  return total;
}

inline double crps_gaussian(double mean, double var, double y) {
  const double s = std::sqrt(var);
  const double z = (y - mean) / s;
  return s * (z * (2.0 * normal::cdf(z) - 1.0) + 2.0 * normal::pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

/// Quantile of the piecewise-linear binned CDF.
inline double binned_quantile(const BinGrid& grid, const BinPMF& pmf, double q) {
  const auto e = grid.edges();
  double cdf = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    const double next = cdf + pmf[k];
    if (next >= q && pmf[k] > 0.0) return e[k] + (e[k + 1] - e[k]) * std::clamp((q - cdf) / pmf[k], 0.0, 1.0);
    cdf = next;
  }
  return grid.hi();
}

inline double normal_quantile_central(double level) {
  // Two-sided standard normal quantiles for the fixed coverage levels.
  if (level == 0.5) return 0.6744897501960817;
  if (level == 0.8) return 1.2815515655446004;
  if (level == 0.9) return 1.6448536269514722;
  if (level == 0.95) return 1.959963984540054;
  throw DomainError("normal_quantile_central: unsupported level");
}

inline MetricsBundle compute_metrics(std::span<const PointPredictive> preds, std::span<const double> truth,
                                     double eps_v = 1e-12) {
  if (preds.empty()) throw DomainError("compute_metrics: empty test set");
  if (preds.size() != truth.size()) throw DomainError("compute_metrics: size mismatch");
  MetricsBundle m;
  m.n = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const double y = truth[i];
    const double err = y - p.mean;
    const double v = std::max(p.v_tot, eps_v);
    m.rmse += err * err;
    m.mae += std::abs(err);
    m.gaussian_nll += 0.5 * std::log(2.0 * std::numbers::pi * v) + 0.5 * err * err / v;
    m.mean_v_epi += p.v_epi;
    m.mean_v_ale += p.v_ale;
    m.mean_v_tot += p.v_tot;
    if (p.pmf) {
      m.crps += crps_binned(*p.grid, *p.pmf, y);
      for (std::size_t c = 0; c < kCoverageLevels.size(); ++c) {
        const double a = kCoverageLevels[c];
        const double lo = binned_quantile(*p.grid, *p.pmf, 0.5 * (1.0 - a));
        const double hi = binned_quantile(*p.grid, *p.pmf, 0.5 * (1.0 + a));
        m.coverage[c] += (y >= lo && y <= hi) ? 1.0 : 0.0;
      }
    } else {
      m.crps += crps_gaussian(p.mean, v, y);
      const double s = std::sqrt(v);
      for (std::size_t c = 0; c < kCoverageLevels.size(); ++c) {
        m.coverage[c] += std::abs(err) <= normal_quantile_central(kCoverageLevels[c]) * s ? 1.0 : 0.0;
      }
    }
  }
  const double n = static_cast<double>(m.n);
  m.rmse = std::sqrt(m.rmse / n);
  m.mae /= n;
  m.gaussian_nll /= n;
  m.crps /= n;
  for (double& c : m.coverage) c /= n;
  m.mean_v_epi /= n;
  m.mean_v_ale /= n;
  m.mean_v_tot /= n;
  return m;
}

inline void to_json(nlohmann::json& j, const MetricsBundle& m) {
  j = {{"rmse", m.rmse},
       {"mae", m.mae},
       {"nll", m.gaussian_nll},
       {"crps", m.crps},
       {"cov50", m.coverage[0]},
       {"cov80", m.coverage[1]},
       {"cov90", m.coverage[2]},
       {"cov95", m.coverage[3]},
       {"v_epi", m.mean_v_epi},
       {"v_ale", m.mean_v_ale},
       {"v_tot", m.mean_v_tot},
       {"n", m.n}};
}

}  // namespace dbs
