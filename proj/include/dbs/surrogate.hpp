#pragma once

// Surrogates seen by the experiment loops. Inputs live in the unit cube;
// targets are standardized internally and every output is returned in the
// caller's units.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbs/acquisition.hpp"
#include "dbs/gp.hpp"
#include "dbs/icl/model.hpp"
#include "dbs/metrics.hpp"
#include "dbs/prediction.hpp"

namespace dbs {

class Surrogate {
 public:
  virtual ~Surrogate() = default;

  /// noise: per-point observation noise variances, used only by surrogates
  /// that take the noise as known.
  virtual void condition(const Matrix& x, std::span<const double> y, std::span<const double> noise = {}) = 0;

  /// noise_q: known noise variance at each query (same convention).
  virtual std::vector<PredictiveSummary> summarize(const Matrix& xq, std::span<const double> noise_q = {}) const = 0;
  virtual std::vector<DecoupledPrediction> predict(const Matrix& xq, std::span<const double> noise_q = {}) const = 0;

  virtual bool decoupled() const = 0;
  virtual std::string name() const = 0;

  /// True when predictions depend on earlier condition() calls, not only on
  /// the current data; resuming a run must then replay those calls.
  virtual bool stateful() const { return false; }

  /// Test-time predictives for metrics.
  virtual std::vector<PointPredictive> point_predictives(const Matrix& xq, std::span<const double> noise_q = {}) const {
    std::vector<PointPredictive> out;
    for (const auto& s : summarize(xq, noise_q)) {
      out.push_back({s.mu_y, s.has_epistemic ? s.v_epi : 0.0, s.has_epistemic ? s.noise_var : 0.0, s.v_tot, nullptr,
                     std::nullopt});
    }
    return out;
  }
};

namespace detail {

struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;

  static Standardizer fit(std::span<const double> y) {
    Standardizer s;
    if (y.empty()) return s;
    for (double v : y) s.mean += v;
    s.mean /= static_cast<double>(y.size());
    double ss = 0.0;
    for (double v : y) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(y.size()));
    if (!(s.sd > 1e-12)) s.sd = 1.0;
    return s;
  }
};

}  // namespace detail

/// Exact GP. With known noise the caller supplies noise variances for the
/// context and the queries; otherwise a homoscedastic noise level is chosen
/// together with the kernel by marginal likelihood.
class GpSurrogate final : public Surrogate {
 public:
  struct Options {
    bool known_noise = true;
    HyperGrid hypers = HyperGrid::standard();
    // Hyperparameters are re-selected when the context has grown by at least
    // this many points since the last selection (1 = every call).
    std::size_t refit_every = 1;
    // Smallest standardized noise variance handed to the GP.
    double min_noise = 1e-6;
    // Bins for binned predictions, in standardized units.
    double grid_bound = 3.0;
    std::size_t bins = 64;
  };

  GpSurrogate() : GpSurrogate(Options{}) {}
  explicit GpSurrogate(Options opt) : opt_(std::move(opt)) {}

  void condition(const Matrix& x, std::span<const double> y, std::span<const double> noise = {}) override {
    if (opt_.known_noise && noise.size() != y.size()) throw ContractError("GpSurrogate: known noise required for every point");
    std_ = detail::Standardizer::fit(y);
    std::vector<double> ys(y.size()), ns(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) ys[i] = (y[i] - std_.mean) / std_.sd;
    const bool refit = !hyper_ || x.rows() >= fitted_at_ + opt_.refit_every;
    if (opt_.known_noise) {
      for (std::size_t i = 0; i < y.size(); ++i) ns[i] = std::max(noise[i] / (std_.sd * std_.sd), opt_.min_noise);
      if (refit) hyper_ = gp_fit_hypers_known_noise(x, ys, ns, opt_.hypers);
    } else {
      if (refit) hyper_ = gp_fit_hypers(x, ys, opt_.hypers);
      hyper_->noise_var = std::max(hyper_->noise_var, opt_.min_noise);
      std::fill(ns.begin(), ns.end(), hyper_->noise_var);
    }
    if (refit) fitted_at_ = x.rows();
    gp_.emplace(x, std::move(ys), hyper_->kernel, std::move(ns));
  }

  std::vector<PredictiveSummary> summarize(const Matrix& xq, std::span<const double> noise_q = {}) const override {
    check_ready();
    std::vector<double> mu, v;
    gp_->posterior_batch(xq, mu, v);
    std::vector<PredictiveSummary> out(xq.rows());
    const double s2 = std_.sd * std_.sd;
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto& s = out[i];
      s.mu_f = s.mu_y = std_.mean + std_.sd * mu[i];
      s.v_epi = s2 * v[i];
      s.noise_var = query_noise(noise_q, i);
      s.v_tot = s.v_epi + s.noise_var;
    }
    return out;
  }

  /// Latent N(mu_f, v_epi) discretized on the standardized grid (mapped back
  /// to caller units) and convolved with the noise. The representation is
  /// the normalized kernel vector against the context.
  std::vector<DecoupledPrediction> predict(const Matrix& xq, std::span<const double> noise_q = {}) const override {
    check_ready();
    const BinGrid base = BinGrid::uniform(-opt_.grid_bound, opt_.grid_bound, opt_.bins);
    const auto grid = std::make_shared<const BinGrid>(base.affine(std_.mean, std_.sd));
    const auto sums = summarize(xq, noise_q);
    std::vector<DecoupledPrediction> out;
    out.reserve(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
      const auto& s = sums[i];
      const BinPMF latent = discretize_gaussian({s.mu_f, std::max(s.v_epi, kVarianceFloor)}, *grid);
      const Eigen::VectorXd k = gp_->kernel_vector(xq.row(i));
      const double norm = k.norm();
      std::vector<double> repr(static_cast<std::size_t>(k.size()));
      for (Eigen::Index j = 0; j < k.size(); ++j) repr[static_cast<std::size_t>(j)] = norm > 0.0 ? k(j) / norm : 0.0;
      out.push_back(DecoupledPrediction::from_latent(grid, latent, std::max(s.noise_var, kVarianceFloor), std::move(repr)));
    }
    return out;
  }

  bool decoupled() const override { return true; }
  std::string name() const override { return "gp"; }
  bool stateful() const override { return opt_.refit_every > 1; }
  const std::optional<HyperCandidate>& hypers() const noexcept { return hyper_; }

 private:
  void check_ready() const {
    if (!gp_) throw ContractError("GpSurrogate: condition() must be called first");
  }

  double query_noise(std::span<const double> noise_q, std::size_t i) const {
    if (opt_.known_noise) {
      if (noise_q.empty()) throw ContractError("GpSurrogate: known noise required at the queries");
      return noise_q[i];
    }
    return hyper_->noise_var * std_.sd * std_.sd;
  }

  Options opt_;
  detail::Standardizer std_;
  std::optional<HyperCandidate> hyper_;
  std::size_t fitted_at_ = 0;
  std::optional<GPState> gp_;
};

/// In-context model. Features are z-scored with context statistics and
/// targets are normalized by the context mean and standard deviation, the
/// same units the model was trained in.
class IclSurrogate final : public Surrogate {
 public:
  explicit IclSurrogate(icl::Model model) : model_(std::move(model)) {}

  void condition(const Matrix& x, std::span<const double> y, std::span<const double> = {}) override {
    if (x.cols() > model_.spec().input_dim_max) throw ContractError("IclSurrogate: input wider than the model");
    std_ = detail::Standardizer::fit(y);
    feat_mean_.assign(x.cols(), 0.0);
    feat_sd_.assign(x.cols(), 1.0);
    for (std::size_t d = 0; d < x.cols(); ++d) {
      std::vector<double> col(x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i) col[i] = x(i, d);
      const auto s = detail::Standardizer::fit(col);
      feat_mean_[d] = s.mean;
      feat_sd_[d] = s.sd;
    }
    x_ctx_ = scale_inputs(x);
    y_ctx_.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) y_ctx_[i] = (y[i] - std_.mean) / std_.sd;
  }

  std::vector<DecoupledPrediction> predict(const Matrix& xq, std::span<const double> = {}) const override {
    if (y_ctx_.empty()) throw ContractError("IclSurrogate: condition() must be called first");
    auto raw = model_.predict(x_ctx_, y_ctx_, scale_inputs(xq));
    const auto grid = std::make_shared<const BinGrid>(model_.grid()->affine(std_.mean, std_.sd));
    const double s2 = std_.sd * std_.sd;
    for (auto& p : raw) {
      p.grid = grid;
      if (p.noise_var) *p.noise_var *= s2;
    }
    return raw;
  }

  std::vector<PredictiveSummary> summarize(const Matrix& xq, std::span<const double> noise_q = {}) const override {
    std::vector<PredictiveSummary> out;
    for (const auto& p : predict(xq, noise_q)) out.push_back(dbs::summarize(p));
    return out;
  }

  std::vector<PointPredictive> point_predictives(const Matrix& xq, std::span<const double> noise_q = {}) const override {
    std::vector<PointPredictive> out;
    for (auto& p : predict(xq, noise_q)) {
      const auto s = dbs::summarize(p);
      out.push_back({s.mu_y, s.has_epistemic ? s.v_epi : 0.0, s.has_epistemic ? s.noise_var : 0.0, s.v_tot, p.grid,
                     std::move(p.observation)});
    }
    return out;
  }

  bool decoupled() const override { return model_.spec().variant == icl::Variant::decoupled; }
  std::string name() const override { return decoupled() ? "dec-icl" : "tuned-icl"; }

 private:
  Matrix scale_inputs(const Matrix& x) const {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t d = 0; d < x.cols(); ++d) out(i, d) = (x(i, d) - feat_mean_[d]) / feat_sd_[d];
    }
    return out;
  }

  icl::Model model_;
  detail::Standardizer std_;
  std::vector<double> feat_mean_, feat_sd_;
  Matrix x_ctx_;
  std::vector<double> y_ctx_;
};

}  // namespace dbs
