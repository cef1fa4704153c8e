#pragma once

// Exact GP regression with an RBF kernel: the closed-form decoupled surrogate.
// The latent posterior gives the epistemic part, the noise model the
// aleatoric part.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "dbs/bins.hpp"
#include "dbs/core/errors.hpp"
#include "dbs/core/matrix.hpp"
#include "dbs/core/normal.hpp"

namespace dbs {

struct RbfKernel {
  double lengthscale = 1.0;
  double amplitude = 1.0;

  double operator()(std::span<const double> a, std::span<const double> b) const noexcept {
    double r2 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) r2 += (a[k] - b[k]) * (a[k] - b[k]);
    return amplitude * amplitude * std::exp(-0.5 * r2 / (lengthscale * lengthscale));
  }

  friend bool operator==(const RbfKernel&, const RbfKernel&) = default;
};

struct PosteriorMoments {
  double mu_f = 0.0;
  double v_epi = 0.0;
  double noise_var = 0.0;
  double v_tot = 0.0;
};

namespace detail {

inline Eigen::MatrixXd gram(const Matrix& x, const RbfKernel& k) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = k.amplitude * k.amplitude;
    for (Eigen::Index j = 0; j < i; ++j) {
      g(i, j) = g(j, i) = k(x.row(static_cast<std::size_t>(i)), x.row(static_cast<std::size_t>(j)));
    }
  }
  return g;
}

}  // namespace detail

/// Fitted GP. Holds the Cholesky factor of K + diag(noise) + jitter I and
/// alpha = (K + ...)^-1 y. Immutable after construction.
class GPState {
 public:
  inline static constexpr int kJitterEscalations = 3;

  /// Per-point noise variances (known-noise mode). jitter <= 0 selects the
  /// default starting value 1e-8 A^2; failed factorizations retry with the
  /// jitter multiplied by 10, at most three times.
  GPState(Matrix x, std::vector<double> y, RbfKernel kernel, std::vector<double> noise,
          double jitter = 0.0)
      : x_(std::move(x)), y_(std::move(y)), kernel_(kernel), noise_(std::move(noise)) {
    const std::size_t n = x_.rows();
    if (n == 0) throw DomainError("gp_fit: empty context");
    if (y_.size() != n || noise_.size() != n) throw DomainError("gp_fit: size mismatch");
    if (!(kernel_.lengthscale > 0.0) || !(kernel_.amplitude > 0.0)) {
      throw DomainError("gp_fit: kernel parameters must be positive");
    }
    for (double v : noise_) {
      if (!(v > 0.0)) throw DomainError("gp_fit: noise variances must be positive");
    }
    Eigen::MatrixXd a = detail::gram(x_, kernel_);
    for (std::size_t i = 0; i < n; ++i) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += noise_[i];

    jitter_ = jitter > 0.0 ? jitter : 1e-8 * kernel_.amplitude * kernel_.amplitude;
    for (int attempt = 0;; ++attempt) {
      Eigen::MatrixXd aj = a;
      aj.diagonal().array() += jitter_;
      llt_.compute(aj);
      if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().minCoeff() > 0.0) break;
      if (attempt == kJitterEscalations) {
        throw NumericError("gp_fit: factorization failed after jitter escalation");
      }
      jitter_ *= 10.0;
    }
    const Eigen::Map<const Eigen::VectorXd> yv(y_.data(), static_cast<Eigen::Index>(n));
    alpha_ = llt_.solve(yv);
  }

  /// Homoscedastic noise variance shared by all points.
  GPState(Matrix x, std::vector<double> y, RbfKernel kernel, double noise_var, double jitter = 0.0)
      : GPState(std::move(x), y, kernel, std::vector<double>(y.size(), noise_var), jitter) {}

  std::size_t size() const noexcept { return x_.rows(); }
  const Matrix& inputs() const noexcept { return x_; }
  const std::vector<double>& targets() const noexcept { return y_; }
  const RbfKernel& kernel() const noexcept { return kernel_; }
  double jitter() const noexcept { return jitter_; }

  Eigen::VectorXd kernel_vector(std::span<const double> xq) const {
    Eigen::VectorXd k(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) k(static_cast<Eigen::Index>(i)) = kernel_(x_.row(i), xq);
    return k;
  }

  /// Latent posterior mean and variance at xq, plus the given noise variance.
  PosteriorMoments posterior(std::span<const double> xq, double noise_at_query) const {
    if (xq.size() != x_.cols()) throw DomainError("gp_posterior: input dimension mismatch");
    const Eigen::VectorXd k = kernel_vector(xq);
    const double mu = k.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(k);
    const double prior = kernel_.amplitude * kernel_.amplitude;
    const double v_epi = std::max(prior - v.squaredNorm(), 0.0);
    return {mu, v_epi, noise_at_query, v_epi + noise_at_query};
  }

  /// Latent mean and variance for every row of xq with one triangular solve.
  void posterior_batch(const Matrix& xq, std::vector<double>& mu, std::vector<double>& v_epi) const {
    if (xq.cols() != x_.cols()) throw DomainError("gp_posterior: input dimension mismatch");
    const auto n = static_cast<Eigen::Index>(size());
    const auto m = static_cast<Eigen::Index>(xq.rows());
    Eigen::MatrixXd k(n, m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto q = xq.row(static_cast<std::size_t>(j));
      for (Eigen::Index i = 0; i < n; ++i) k(i, j) = kernel_(x_.row(static_cast<std::size_t>(i)), q);
    }
    const Eigen::VectorXd mean = k.transpose() * alpha_;
    llt_.matrixL().solveInPlace(k);
    const double prior = kernel_.amplitude * kernel_.amplitude;
    mu.resize(static_cast<std::size_t>(m));
    v_epi.resize(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
      mu[static_cast<std::size_t>(j)] = mean(j);
      v_epi[static_cast<std::size_t>(j)] = std::max(prior - k.col(j).squaredNorm(), 0.0);
    }
  }

  double log_marginal_likelihood() const {
    const Eigen::Map<const Eigen::VectorXd> yv(y_.data(), static_cast<Eigen::Index>(size()));
    const double logdet = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    return -0.5 * yv.dot(alpha_) - 0.5 * logdet -
           0.5 * static_cast<double>(size()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  Matrix x_;
  std::vector<double> y_;
  RbfKernel kernel_;
  std::vector<double> noise_;
  double jitter_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

/// Bin masses of N(mean, var) over the grid; the boundary bins absorb the
/// tails.
inline BinPMF discretize_gaussian(const GaussianMoments& m, const BinGrid& grid) {
  if (!(m.variance > 0.0)) throw DomainError("discretize_gaussian: variance must be positive");
  const double sd = std::sqrt(m.variance);
  const auto e = grid.edges();
  const std::size_t k = grid.size();
  std::vector<double> p(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double lo = j == 0 ? -INFINITY : (e[j] - m.mean) / sd;
    const double hi = j + 1 == k ? INFINITY : (e[j + 1] - m.mean) / sd;
    p[j] = normal::interval_mass(lo, hi);
    total += p[j];
  }
  for (double& v : p) v /= total;
  return BinPMF(std::move(p));
}

// ---------------------------------------------------------------------------
// Hyperparameter selection by exhaustive grid search.

struct HyperCandidate {
  RbfKernel kernel;
  double noise_var = 0.0;  // unused in known-noise mode
};

struct HyperGrid {
  std::vector<double> lengthscales;
  std::vector<double> amplitudes;
  std::vector<double> noise_vars;

  static std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
      v[i] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
    }
    return v;
  }

  // 16 lengthscales in [0.05, 5], 8 amplitudes in [0.2, 5], 8 noise
  // variances in [1e-4, 1], all log-spaced.
  static HyperGrid standard() {
    return {log_spaced(0.05, 5.0, 16), log_spaced(0.2, 5.0, 8), log_spaced(1e-4, 1.0, 8)};
  }

  std::size_t size() const noexcept {
    return lengthscales.size() * amplitudes.size() * noise_vars.size();
  }
};

/// Argmax of the exact log marginal likelihood over the grid (homoscedastic
/// noise). One eigendecomposition of the unit-amplitude Gram matrix per
/// lengthscale covers every (A, noise) pair. Ties go to the smaller
/// lengthscale, then the smaller amplitude, then the smaller noise.
inline HyperCandidate gp_fit_hypers(const Matrix& x, std::span<const double> y,
                                    const HyperGrid& grid) {
  if (grid.size() == 0) throw DomainError("gp_fit_hypers: empty candidate grid");
  if (x.rows() == 0 || x.rows() != y.size()) throw DomainError("gp_fit_hypers: bad context");
  const auto n = static_cast<Eigen::Index>(x.rows());
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const double log2pi = std::log(2.0 * std::numbers::pi);

  std::optional<HyperCandidate> best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (double ell : grid.lengthscales) {
    const Eigen::MatrixXd r = detail::gram(x, RbfKernel{ell, 1.0});
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
    if (eig.info() != Eigen::Success) continue;
    const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
    const Eigen::VectorXd proj2 = (eig.eigenvectors().transpose() * yv).array().square();
    for (double amp : grid.amplitudes) {
      const double a2 = amp * amp;
      for (double nv : grid.noise_vars) {
        const double shift = nv + 1e-8 * a2;
        double quad = 0.0, logdet = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double ev = a2 * lam(i) + shift;
          quad += proj2(i) / ev;
          logdet += std::log(ev);
        }
        const double lml = -0.5 * quad - 0.5 * logdet - 0.5 * static_cast<double>(n) * log2pi;
        if (std::isfinite(lml) && lml > best_lml) {
          best_lml = lml;
          best = HyperCandidate{{ell, amp}, nv};
        }
      }
    }
  }
  if (!best) throw NumericError("gp_fit_hypers: every candidate failed");
  return *best;
}

/// Known-noise variant: selects (lengthscale, amplitude) with the given
/// per-point noise variances held fixed.
inline HyperCandidate gp_fit_hypers_known_noise(const Matrix& x, std::span<const double> y,
                                                std::span<const double> noise,
                                                const HyperGrid& grid) {
  if (grid.lengthscales.empty() || grid.amplitudes.empty()) {
    throw DomainError("gp_fit_hypers: empty candidate grid");
  }
  std::optional<HyperCandidate> best;
  double best_lml = -std::numeric_limits<double>::infinity();
  const std::vector<double> yv(y.begin(), y.end()), nv(noise.begin(), noise.end());
  for (double ell : grid.lengthscales) {
    for (double amp : grid.amplitudes) {
      try {
        const GPState gp(x, yv, RbfKernel{ell, amp}, nv);
        const double lml = gp.log_marginal_likelihood();
        if (std::isfinite(lml) && lml > best_lml) {
          best_lml = lml;
          best = HyperCandidate{{ell, amp}, 0.0};
        }
      } catch (const NumericError&) {
      }
    }
  }
  if (!best) throw NumericError("gp_fit_hypers: every candidate failed");
  return *best;
}

}  // namespace dbs
