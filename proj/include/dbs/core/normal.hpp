#pragma once

#include <cmath>
#include <numbers>

namespace dbs::normal {

inline constexpr double inv_sqrt2 = 0.70710678118654752440;
inline constexpr double inv_sqrt_2pi = 0.39894228040143267794;

inline double pdf(double z) { return inv_sqrt_2pi * std::exp(-0.5 * z * z); }

inline double cdf(double z) { return 0.5 * std::erfc(-z * inv_sqrt2); }

// Upper tail 1 - cdf(z), accurate for large positive z.
inline double sf(double z) { return 0.5 * std::erfc(z * inv_sqrt2); }

// P(lo < Z <= hi) for a standard normal, computed from whichever tail keeps
// the two terms small so mirrored intervals give mirrored results exactly.
inline double interval_mass(double lo, double hi) {
  if (lo >= 0.0) return sf(lo) - sf(hi);
  if (hi <= 0.0) return cdf(hi) - cdf(lo);
  return 1.0 - cdf(lo) - sf(hi);
}

/// z * cdf(z) + pdf(z), the standardized expected improvement.
///
/// For very negative z the two terms cancel almost completely; there we use
/// the Laplace continued fraction for the Mills ratio R(x) = sf(x)/pdf(x):
/// R = 1/(x + t) with t = 1/(x + 2/(x + 3/(x + ...))), which gives
/// 1 - x R = t / (x + t) without cancellation.
inline double ei_standard(double z) {
  if (z > -5.0) {
    return z * cdf(z) + pdf(z);
  }
  const double x = -z;
  double tail = 0.0;
  for (int k = 120; k >= 2; --k) tail = k / (x + tail);
  const double t = 1.0 / (x + tail);
  return pdf(z) * t / (x + t);
}

}  // namespace dbs::normal
