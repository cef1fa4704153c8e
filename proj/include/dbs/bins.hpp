#pragma once

// Binned distributions over a fixed target grid: the latent-to-observation
// Gaussian transition matrix, convolution, moments and the training losses.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbs/core/errors.hpp"
#include "dbs/core/normal.hpp"
#include "json.hpp"

namespace dbs {

// Per-entry floor applied to transition probabilities before row
// renormalization; also caps the bar loss at -log(kTransitionFloor).
inline constexpr double kTransitionFloor = 1e-12;
// Floor applied to every variance computed from a PMF.
inline constexpr double kVarianceFloor = 1e-12;

class BinGrid {
 public:
  // Arbitrary strictly increasing edges a_0 < ... < a_K, K >= 2.
  explicit BinGrid(std::vector<double> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 3) throw DomainError("BinGrid: need at least 2 bins");
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      if (!std::isfinite(edges_[k])) throw DomainError("BinGrid: non-finite edge");
      if (k > 0 && !(edges_[k] > edges_[k - 1])) {
        throw DomainError("BinGrid: edges must be strictly increasing");
      }
    }
    finish();
  }

  // K equal-width bins on [lo, hi]. Edges are computed as
  // (lo * (K - k) + hi * k) / K so that a grid with lo == -hi is exactly
  // antisymmetric.
  static BinGrid uniform(double lo, double hi, std::size_t bins) {
    if (!(lo < hi)) throw DomainError("build_grid: need lo < hi");
    if (bins < 2) throw DomainError("build_grid: need K >= 2");
    std::vector<double> e(bins + 1);
    const double kd = static_cast<double>(bins);
    for (std::size_t k = 0; k <= bins; ++k) {
      e[k] = (lo * static_cast<double>(bins - k) + hi * static_cast<double>(k)) / kd;
    }
    e.front() = lo;
    e.back() = hi;
    return BinGrid(std::move(e));
  }

  std::size_t size() const noexcept { return centers_.size(); }
  std::span<const double> edges() const noexcept { return edges_; }
  std::span<const double> centers() const noexcept { return centers_; }
  std::span<const double> widths() const noexcept { return widths_; }
  double lo() const noexcept { return edges_.front(); }
  double hi() const noexcept { return edges_.back(); }
  double center(std::size_t j) const noexcept { return centers_[j]; }
  double width(std::size_t j) const noexcept { return widths_[j]; }
  double max_width() const noexcept { return *std::max_element(widths_.begin(), widths_.end()); }

  // Nonzero when all widths agree to 1e-12 relative; enables the offset
  // fast path in TransitionMatrix.
  double uniform_width() const noexcept { return uniform_width_; }
  bool is_uniform() const noexcept { return uniform_width_ > 0.0; }

  /// 0-based index of the bin holding y. Bins are right-open except the last,
  /// which is right-closed; values outside [lo, hi] clamp to the boundary bins.
  std::size_t bin_index(double y) const {
    if (std::isnan(y)) throw DomainError("bin_index: NaN target");
    if (y <= edges_.front()) return 0;
    if (y >= edges_.back()) return size() - 1;
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), y);
    return static_cast<std::size_t>(it - edges_.begin()) - 1;
  }

  // Grid with edges mapped through e -> shift + scale * e, scale > 0.
  BinGrid affine(double shift, double scale) const {
    if (!(scale > 0.0)) throw DomainError("BinGrid::affine: scale must be positive");
    std::vector<double> e(edges_.size());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = shift + scale * edges_[k];
    return BinGrid(std::move(e));
  }

  friend bool operator==(const BinGrid& a, const BinGrid& b) { return a.edges_ == b.edges_; }

 private:
  void finish() {
    const std::size_t k = edges_.size() - 1;
    centers_.resize(k);
    widths_.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      centers_[j] = 0.5 * (edges_[j] + edges_[j + 1]);
      widths_[j] = edges_[j + 1] - edges_[j];
    }
    const double mean_width = (edges_.back() - edges_.front()) / static_cast<double>(k);
    const bool uniform = std::all_of(widths_.begin(), widths_.end(), [&](double w) {
      return std::abs(w - mean_width) <= 1e-12 * mean_width;
    });
    uniform_width_ = uniform ? mean_width : 0.0;
  }

  std::vector<double> edges_;
  std::vector<double> centers_;
  std::vector<double> widths_;
  double uniform_width_ = 0.0;
};

inline BinGrid build_grid(double lo, double hi, std::size_t bins) {
  return BinGrid::uniform(lo, hi, bins);
}

class BinPMF {
 public:
  inline static constexpr double kSumTolerance = 1e-9;

  BinPMF() = default;
  explicit BinPMF(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw DomainError("BinPMF: empty");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("BinPMF: negative or non-finite mass");
      total += p;
    }
    if (std::abs(total - 1.0) > kSumTolerance) throw DomainError("BinPMF: masses do not sum to 1");
  }

  static BinPMF uniform(std::size_t k) { return BinPMF(std::vector<double>(k, 1.0 / static_cast<double>(k))); }

  static BinPMF one_hot(std::size_t k, std::size_t j) {
    std::vector<double> p(k, 0.0);
    p.at(j) = 1.0;
    return BinPMF(std::move(p));
  }

  // Numerically stable softmax, evaluated in double.
  template <typename T>
  static BinPMF from_logits(std::span<const T> logits) {
    std::vector<double> p(logits.size());
    double mx = -INFINITY;
    for (T l : logits) mx = std::max(mx, static_cast<double>(l));
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(static_cast<double>(logits[i]) - mx);
      total += p[i];
    }
    for (double& v : p) v /= total;
    return BinPMF(std::move(p));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t j) const noexcept { return probs_[j]; }

  friend bool operator==(const BinPMF&, const BinPMF&) = default;

 private:
  std::vector<double> probs_;
};

struct GaussianMoments {
  double mean = 0.0;
  double variance = 1.0;
};

struct LossWeights {
  double lambda_y = 1.0;
  double lambda_f = 1.0;
  double lambda_sigma = 0.1;

  void validate() const {
    if (!(lambda_y >= 0.0 && lambda_f >= 0.0 && lambda_sigma >= 0.0)) {
      throw DomainError("LossWeights: weights must be nonnegative");
    }
  }
};

namespace detail {

inline void check_noise_var(double noise_var) {
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
    throw DomainError("transition: noise variance must be positive and finite");
  }
}

inline void check_sizes(const BinGrid& grid, const BinPMF& pmf) {
  if (grid.size() != pmf.size()) throw DomainError("grid and PMF sizes differ");
}

// Derivative of interval_mass(lo/s, hi/s) with respect to s, given the
// standardized endpoints.
inline double interval_mass_dsigma(double u_lo, double u_hi, double sigma) {
  return (u_lo * normal::pdf(u_lo) - u_hi * normal::pdf(u_hi)) / sigma;
}

}  // namespace detail

/// Row-stochastic K x K matrix T[j][k]: probability that a Gaussian centred at
/// c_j with the given variance lands in bin k, truncated to the grid, floored
/// at kTransitionFloor per entry and renormalized per row. Optionally also
/// holds dT/dsigma (sigma = sqrt(noise_var)).
class TransitionMatrix {
 public:
  TransitionMatrix(const BinGrid& grid, double noise_var, bool with_derivative = false)
      : k_(grid.size()), values_(k_ * k_) {
    detail::check_noise_var(noise_var);
    const double sigma = std::sqrt(noise_var);
    std::vector<double> draw;
    if (with_derivative) {
      dvalues_.resize(k_ * k_);
      draw.resize(k_);
    }
    std::vector<double> raw(k_);

    // Uniform grids: the standardized edge offset depends only on k - j.
    std::vector<double> off_mass, off_dmass;
    if (grid.is_uniform()) {
      const double w = grid.uniform_width();
      off_mass.resize(2 * k_ - 1);
      if (with_derivative) off_dmass.resize(2 * k_ - 1);
      for (std::size_t i = 0; i < 2 * k_ - 1; ++i) {
        const double m = static_cast<double>(i) - static_cast<double>(k_ - 1);
        const double u_lo = (m - 0.5) * w / sigma;
        const double u_hi = (m + 0.5) * w / sigma;
        off_mass[i] = normal::interval_mass(u_lo, u_hi);
        if (with_derivative) off_dmass[i] = detail::interval_mass_dsigma(u_lo, u_hi, sigma);
      }
    }

    const auto edges = grid.edges();
    for (std::size_t j = 0; j < k_; ++j) {
      const double c = grid.center(j);
      for (std::size_t k = 0; k < k_; ++k) {
        if (grid.is_uniform()) {
          const std::size_t i = k + (k_ - 1) - j;
          raw[k] = off_mass[i];
          if (with_derivative) draw[k] = off_dmass[i];
        } else {
          const double u_lo = (edges[k] - c) / sigma;
          const double u_hi = (edges[k + 1] - c) / sigma;
          raw[k] = normal::interval_mass(u_lo, u_hi);
          if (with_derivative) draw[k] = detail::interval_mass_dsigma(u_lo, u_hi, sigma);
        }
      }
      double total = 0.0, dtotal = 0.0;
      for (std::size_t k = 0; k < k_; ++k) {
        if (raw[k] > kTransitionFloor) {
          if (with_derivative) dtotal += draw[k];
        } else {
          raw[k] = kTransitionFloor;
          if (with_derivative) draw[k] = 0.0;
        }
        total += raw[k];
      }
      for (std::size_t k = 0; k < k_; ++k) {
        const double t = raw[k] / total;
        values_[j * k_ + k] = t;
        if (with_derivative) dvalues_[j * k_ + k] = (draw[k] - t * dtotal) / total;
      }
    }
  }

  std::size_t size() const noexcept { return k_; }
  double operator()(std::size_t j, std::size_t k) const noexcept { return values_[j * k_ + k]; }
  std::span<const double> row(std::size_t j) const noexcept { return {values_.data() + j * k_, k_}; }
  // dT[j][k] / dsigma; only valid when constructed with_derivative.
  double dsigma(std::size_t j, std::size_t k) const noexcept { return dvalues_[j * k_ + k]; }

 private:
  std::size_t k_;
  std::vector<double> values_;
  std::vector<double> dvalues_;
};

inline std::vector<double> transition_row(const BinGrid& grid, std::size_t j, double noise_var) {
  if (j >= grid.size()) throw DomainError("transition_row: bin index out of range");
  const TransitionMatrix t(grid, noise_var);
  const auto r = t.row(j);
  return {r.begin(), r.end()};
}

/// Observation PMF p_k = sum_j latent_j T[j][k].
inline BinPMF convolve(const BinGrid& grid, const BinPMF& latent, double noise_var) {
  detail::check_sizes(grid, latent);
  const TransitionMatrix t(grid, noise_var);
  const std::size_t k = grid.size();
  std::vector<double> out(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double pj = latent[j];
    if (pj == 0.0) continue;
    const auto row = t.row(j);
    for (std::size_t i = 0; i < k; ++i) out[i] += pj * row[i];
  }
  return BinPMF(std::move(out));
}

inline GaussianMoments pmf_mean_var(const BinGrid& grid, const BinPMF& pmf) {
  detail::check_sizes(grid, pmf);
  double mean = 0.0, second = 0.0;
  for (std::size_t j = 0; j < pmf.size(); ++j) {
    const double c = grid.center(j);
    mean += pmf[j] * c;
    second += pmf[j] * c * c;
  }
  return {mean, std::max(second - mean * mean, kVarianceFloor)};
}

// Entropy in nats.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline double total_variation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

inline double total_variation(const BinPMF& a, const BinPMF& b) {
  return total_variation(a.probs(), b.probs());
}

/// Binned negative log-likelihood -log p_b(y) + log w_b(y); zero mass is
/// capped at -log(kTransitionFloor).
inline double bar_nll(const BinGrid& grid, const BinPMF& obs, double y) {
  detail::check_sizes(grid, obs);
  const std::size_t b = grid.bin_index(y);
  return -std::log(std::max(obs[b], kTransitionFloor)) + std::log(grid.width(b));
}

inline double latent_cat_nll(const BinGrid& grid, const BinPMF& latent, double f_star) {
  detail::check_sizes(grid, latent);
  const std::size_t b = grid.bin_index(f_star);
  return -std::log(std::max(latent[b], kTransitionFloor));
}

inline double log_var_loss(double pred_var, double true_var) {
  if (!(pred_var > 0.0) || !(true_var > 0.0)) {
    throw DomainError("log_var_loss: variances must be positive");
  }
  const double d = std::log(pred_var) - std::log(true_var);
  return d * d;
}

inline double total_loss(const BinGrid& grid, const BinPMF& latent, double pred_var, double y,
                         double f_star, double true_var, const LossWeights& w) {
  w.validate();
  const BinPMF obs = convolve(grid, latent, pred_var);
  return w.lambda_y * bar_nll(grid, obs, y) + w.lambda_f * latent_cat_nll(grid, latent, f_star) +
         w.lambda_sigma * log_var_loss(pred_var, true_var);
}

/// Splits N(m, s^2) into a latent N(m, a) plus independent noise of variance
/// s^2 - a. Every a in (0, s^2) reproduces the same marginal.
inline std::pair<GaussianMoments, double> decompose_gaussian(const GaussianMoments& marginal,
                                                             double a) {
  if (!(a > 0.0 && a < marginal.variance)) {
    throw DomainError("decompose_gaussian: need 0 < a < marginal variance");
  }
  return {GaussianMoments{marginal.mean, a}, marginal.variance - a};
}

// JSON: {"edges": [...]} and {"probs": [...]}.
inline void to_json(nlohmann::json& j, const BinGrid& g) {
  j = nlohmann::json{{"edges", std::vector<double>(g.edges().begin(), g.edges().end())}};
}

inline void to_json(nlohmann::json& j, const BinPMF& p) {
  j = nlohmann::json{{"probs", std::vector<double>(p.probs().begin(), p.probs().end())}};
}

inline void from_json(const nlohmann::json& j, BinPMF& p) {
  p = BinPMF(j.at("probs").get<std::vector<double>>());
}

}  // namespace dbs

template <>
struct nlohmann::adl_serializer<dbs::BinGrid> {
  static dbs::BinGrid from_json(const nlohmann::json& j) {
    return dbs::BinGrid(j.at("edges").get<std::vector<double>>());
  }
  static void to_json(nlohmann::json& j, const dbs::BinGrid& g) { dbs::to_json(j, g); }
};
