#pragma once

// Small cross-attention in-context regressor with a latent-bin head and a
// log-variance head. Forward and reverse passes are written out by hand and
// templated on the scalar type: float for training, double for gradient
// checks.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dbs/bins.hpp"
#include "dbs/core/errors.hpp"
#include "dbs/core/matrix.hpp"
#include "dbs/core/rng.hpp"
#include "dbs/prediction.hpp"
#include "json.hpp"

namespace dbs::icl {

enum class Variant { decoupled, tuned };

inline const char* to_string(Variant v) { return v == Variant::decoupled ? "decoupled" : "tuned"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "decoupled") return Variant::decoupled;
  if (s == "tuned") return Variant::tuned;
  throw ConfigError("unknown model variant: " + s);
}

struct ModelSpec {
  std::size_t input_dim_max = 16;
  std::size_t embed_dim = 64;
  std::size_t n_heads = 4;
  std::size_t encoder_depth = 2;
  std::size_t bins = 64;
  double grid_bound = 3.0;
  Variant variant = Variant::decoupled;

  void validate() const {
    if (input_dim_max < 1) throw DomainError("ModelSpec: input_dim_max must be >= 1");
    if (embed_dim < 1 || n_heads < 1 || embed_dim % n_heads != 0) {
      throw DomainError("ModelSpec: embed_dim must be a positive multiple of n_heads");
    }
    if (encoder_depth < 1) throw DomainError("ModelSpec: encoder_depth must be >= 1");
    if (bins < 2) throw DomainError("ModelSpec: need at least 2 bins");
    if (!(grid_bound > 0.0)) throw DomainError("ModelSpec: grid_bound must be positive");
  }

  // Per-token input: padded x, validity mask, y, query flag.
  std::size_t token_dim() const noexcept { return 2 * input_dim_max + 2; }
  BinGrid grid() const { return build_grid(-grid_bound, grid_bound, bins); }
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

/// Named column-major blocks covering the flat parameter vector exactly once.
class Layout {
 public:
  explicit Layout(const ModelSpec& spec) {
    spec.validate();
    const std::size_t e = spec.embed_dim, in = spec.token_dim();
    for (const char* enc : {"ctx_enc", "qry_enc"}) {
      for (std::size_t l = 0; l < spec.encoder_depth; ++l) {
        const std::string p = std::string(enc) + "." + std::to_string(l);
        add(p + ".W", e, l == 0 ? in : e);
        add(p + ".b", e, 1);
      }
    }
    for (const char* m : {"q", "k", "v", "o"}) {
      add(std::string("attn.W") + m, e, e);
      add(std::string("attn.b") + m, e, 1);
    }
    add("dec.0.W", e, e);
    add("dec.0.b", e, 1);
    add("dec.1.W", e, e);
    add("dec.1.b", e, 1);
    add("head_f.W", spec.bins, e);
    add("head_f.b", spec.bins, 1);
    if (spec.variant == Variant::decoupled) {
      add("head_sigma.W", 1, e);
      add("head_sigma.b", 1, 1);
    }
  }

  std::size_t size() const noexcept { return size_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  const ParamBlock& at(const std::string& name) const { return blocks_.at(index_.at(name)); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

 private:
  void add(std::string name, std::size_t rows, std::size_t cols) {
    index_[name] = blocks_.size();
    blocks_.push_back({std::move(name), size_, rows, cols});
    size_ += rows * cols;
  }

  std::vector<ParamBlock> blocks_;
  std::map<std::string, std::size_t> index_;
  std::size_t size_ = 0;
};

/// Weights ~ N(0, 1/fan_in), biases zero; the two output heads start at a
/// tenth of that scale so initial predictions are close to uniform.
inline std::vector<float> init_params(const Layout& layout, std::uint64_t seed) {
  std::vector<float> p(layout.size(), 0.0f);
  Rng rng(seed, 0, "model-init");
  for (const auto& b : layout.blocks()) {
    if (b.name[b.name.rfind('.') + 1] == 'b') continue;
    double sd = 1.0 / std::sqrt(static_cast<double>(b.cols));
    if (b.name.starts_with("head_")) sd *= 0.1;
    for (std::size_t i = 0; i < b.size(); ++i) p[b.offset + i] = static_cast<float>(rng.normal(0.0, sd));
  }
  return p;
}

namespace detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

constexpr double kLogVarFloor = -27.631021115928547;  // log(1e-12)

template <typename T>
T gelu(T x) {
  return x * T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  return cdf + x * T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
}

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

/// Token matrices (token_dim x n) for a context set and a query set. Context
/// tokens are put in a canonical order (lexicographic on (y, x)) so the
/// forward pass is exactly invariant to the caller's ordering.
template <typename T>
struct Tokens {
  detail::Mat<T> context;
  detail::Mat<T> queries;
};

template <typename T>
Tokens<T> make_tokens(const ModelSpec& spec, const Matrix& x_ctx, std::span<const double> y_ctx,
                      const Matrix& x_qry) {
  const std::size_t d = x_ctx.cols(), dm = spec.input_dim_max;
  if (x_ctx.rows() == 0) throw DomainError("forward: empty context");
  if (x_ctx.rows() != y_ctx.size()) throw DomainError("forward: context size mismatch");
  if (d > dm) throw DomainError("forward: feature dimension exceeds input_dim_max");
  if (x_qry.rows() > 0 && x_qry.cols() != d) throw DomainError("forward: query dimension mismatch");

  std::vector<std::size_t> order(x_ctx.rows());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (y_ctx[a] != y_ctx[b]) return y_ctx[a] < y_ctx[b];
    const auto ra = x_ctx.row(a), rb = x_ctx.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });

  Tokens<T> t;
  const auto td = static_cast<Eigen::Index>(spec.token_dim());
  t.context = detail::Mat<T>::Zero(td, static_cast<Eigen::Index>(x_ctx.rows()));
  t.queries = detail::Mat<T>::Zero(td, static_cast<Eigen::Index>(x_qry.rows()));
  for (std::size_t c = 0; c < order.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    for (std::size_t k = 0; k < d; ++k) {
      t.context(static_cast<Eigen::Index>(k), col) = static_cast<T>(x_ctx(order[c], k));
      t.context(static_cast<Eigen::Index>(dm + k), col) = T(1);
    }
    t.context(td - 2, col) = static_cast<T>(y_ctx[order[c]]);
  }
  for (std::size_t q = 0; q < x_qry.rows(); ++q) {
    const auto col = static_cast<Eigen::Index>(q);
    for (std::size_t k = 0; k < d; ++k) {
      t.queries(static_cast<Eigen::Index>(k), col) = static_cast<T>(x_qry(q, k));
      t.queries(static_cast<Eigen::Index>(dm + k), col) = T(1);
    }
    t.queries(td - 1, col) = T(1);
  }
  return t;
}

/// Network evaluated against a borrowed flat parameter vector.
template <typename T>
class Network {
 public:
  using Mat = detail::Mat<T>;
  using RowVec = detail::RowVec<T>;
  using CMap = Eigen::Map<const Mat>;
  using GMap = Eigen::Map<Mat>;

  struct Cache {
    std::vector<Mat> ctx_pre, ctx_act;  // per encoder layer
    std::vector<Mat> qry_pre, qry_act;
    Mat qp, kp, vp;                     // projections
    std::vector<Mat> probs;             // per head, n_ctx x n_qry
    Mat attn;                           // concatenated head outputs
    Mat z;                              // residual stream
    Mat d0_pre, d0, d1_pre, u;          // decoder
    Mat logits;                         // K x n_qry
    RowVec raw, log_var;                // noise head
  };

  Network(const ModelSpec& spec, const Layout& layout, std::span<const T> params)
      : spec_(spec), layout_(layout), params_(params) {
    if (params.size() != layout.size()) throw DomainError("Network: parameter vector size mismatch");
  }

  CMap w(const std::string& name) const {
    const auto& b = layout_.at(name);
    return CMap(params_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                static_cast<Eigen::Index>(b.cols));
  }

  void forward(const Tokens<T>& tok, Cache& c) const {
    encode("ctx_enc", tok.context, c.ctx_pre, c.ctx_act);
    encode("qry_enc", tok.queries, c.qry_pre, c.qry_act);
    const Mat& ce = c.ctx_act.back();
    const Mat& qe = c.qry_act.back();

    c.qp = (w("attn.Wq") * qe).colwise() + w("attn.bq").col(0);
    c.kp = (w("attn.Wk") * ce).colwise() + w("attn.bk").col(0);
    c.vp = (w("attn.Wv") * ce).colwise() + w("attn.bv").col(0);
    const auto h = static_cast<Eigen::Index>(spec_.n_heads);
    const Eigen::Index dh = static_cast<Eigen::Index>(spec_.embed_dim) / h;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    c.probs.resize(static_cast<std::size_t>(h));
    c.attn.resize(c.qp.rows(), c.qp.cols());
    for (Eigen::Index head = 0; head < h; ++head) {
      Mat s = (c.kp.middleRows(head * dh, dh).transpose() * c.qp.middleRows(head * dh, dh)) * scale;
      for (Eigen::Index q = 0; q < s.cols(); ++q) {
        auto col = s.col(q);
        col.array() = (col.array() - col.maxCoeff()).exp();
        col /= col.sum();
      }
      c.attn.middleRows(head * dh, dh) = c.vp.middleRows(head * dh, dh) * s;
      c.probs[static_cast<std::size_t>(head)] = std::move(s);
    }
    c.z = qe + ((w("attn.Wo") * c.attn).colwise() + w("attn.bo").col(0));

    c.d0_pre = (w("dec.0.W") * c.z).colwise() + w("dec.0.b").col(0);
    c.d0 = c.d0_pre.unaryExpr([](T x) { return detail::gelu(x); });
    c.d1_pre = (w("dec.1.W") * c.d0).colwise() + w("dec.1.b").col(0);
    c.u = c.d1_pre.unaryExpr([](T x) { return detail::gelu(x); });

    c.logits = (w("head_f.W") * c.u).colwise() + w("head_f.b").col(0);
    if (spec_.variant == Variant::decoupled) {
      c.raw = (w("head_sigma.W") * c.u).array() + w("head_sigma.b")(0, 0);
      const T lf = static_cast<T>(detail::kLogVarFloor);
      c.log_var = c.raw.unaryExpr([lf](T r) { return lf + detail::softplus(r - lf); });
    }
  }

  /// Accumulates dLoss/dparams into grad given dLoss/dlogits (K x n_qry) and
  /// dLoss/dlog_var (1 x n_qry, ignored for the tuned variant).
  void backward(const Tokens<T>& tok, const Cache& c, const Mat& d_logits, const RowVec& d_log_var,
                std::span<T> grad) const {
    Mat du = w("head_f.W").transpose() * d_logits;
    acc(grad, "head_f.W", d_logits * c.u.transpose());
    acc(grad, "head_f.b", d_logits.rowwise().sum());
    if (spec_.variant == Variant::decoupled) {
      const T lf = static_cast<T>(detail::kLogVarFloor);
      const RowVec d_raw =
          d_log_var.cwiseProduct(c.raw.unaryExpr([lf](T r) { return detail::sigmoid(r - lf); }));
      du += w("head_sigma.W").transpose() * d_raw;
      acc(grad, "head_sigma.W", d_raw * c.u.transpose());
      acc(grad, "head_sigma.b", Mat::Constant(1, 1, d_raw.sum()));
    }

    const Mat d_d1 = du.cwiseProduct(c.d1_pre.unaryExpr([](T x) { return detail::gelu_grad(x); }));
    acc(grad, "dec.1.W", d_d1 * c.d0.transpose());
    acc(grad, "dec.1.b", d_d1.rowwise().sum());
    const Mat d_d0 = (w("dec.1.W").transpose() * d_d1)
                         .cwiseProduct(c.d0_pre.unaryExpr([](T x) { return detail::gelu_grad(x); }));
    acc(grad, "dec.0.W", d_d0 * c.z.transpose());
    acc(grad, "dec.0.b", d_d0.rowwise().sum());
    const Mat dz = w("dec.0.W").transpose() * d_d0;

    // z = qe + Wo attn + bo
    acc(grad, "attn.Wo", dz * c.attn.transpose());
    acc(grad, "attn.bo", dz.rowwise().sum());
    const Mat d_attn = w("attn.Wo").transpose() * dz;

    const Mat& ce = c.ctx_act.back();
    const Mat& qe = c.qry_act.back();
    const auto h = static_cast<Eigen::Index>(spec_.n_heads);
    const Eigen::Index dh = static_cast<Eigen::Index>(spec_.embed_dim) / h;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat dqp(c.qp.rows(), c.qp.cols()), dkp(c.kp.rows(), c.kp.cols()), dvp(c.vp.rows(), c.vp.cols());
    for (Eigen::Index head = 0; head < h; ++head) {
      const Mat& p = c.probs[static_cast<std::size_t>(head)];
      const auto d_o = d_attn.middleRows(head * dh, dh);
      dvp.middleRows(head * dh, dh) = d_o * p.transpose();
      Mat dp = c.vp.middleRows(head * dh, dh).transpose() * d_o;  // n_ctx x n_qry
      const RowVec inner = p.cwiseProduct(dp).colwise().sum();
      Mat ds = p.cwiseProduct(dp - inner.replicate(dp.rows(), 1)) * scale;
      dqp.middleRows(head * dh, dh) = c.kp.middleRows(head * dh, dh) * ds;
      dkp.middleRows(head * dh, dh) = c.qp.middleRows(head * dh, dh) * ds.transpose();
    }
    acc(grad, "attn.Wq", dqp * qe.transpose());
    acc(grad, "attn.bq", dqp.rowwise().sum());
    acc(grad, "attn.Wk", dkp * ce.transpose());
    acc(grad, "attn.bk", dkp.rowwise().sum());
    acc(grad, "attn.Wv", dvp * ce.transpose());
    acc(grad, "attn.bv", dvp.rowwise().sum());

    const Mat d_qe = dz + w("attn.Wq").transpose() * dqp;
    const Mat d_ce = w("attn.Wk").transpose() * dkp + w("attn.Wv").transpose() * dvp;
    encode_backward("qry_enc", tok.queries, c.qry_pre, c.qry_act, d_qe, grad);
    encode_backward("ctx_enc", tok.context, c.ctx_pre, c.ctx_act, d_ce, grad);
  }

 private:
  void encode(const std::string& prefix, const Mat& in, std::vector<Mat>& pre,
              std::vector<Mat>& act) const {
    const std::size_t depth = spec_.encoder_depth;
    pre.resize(depth);
    act.resize(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      const std::string p = prefix + "." + std::to_string(l);
      const Mat& x = l == 0 ? in : act[l - 1];
      pre[l] = (w(p + ".W") * x).colwise() + w(p + ".b").col(0);
      if (l + 1 < depth) {
        act[l] = pre[l].unaryExpr([](T v) { return detail::gelu(v); });
      } else {
        act[l] = pre[l];
      }
    }
  }

  void encode_backward(const std::string& prefix, const Mat& in, const std::vector<Mat>& pre,
                       const std::vector<Mat>& act, Mat d_out, std::span<T> grad) const {
    for (std::size_t l = spec_.encoder_depth; l-- > 0;) {
      const std::string p = prefix + "." + std::to_string(l);
      Mat da = l + 1 < spec_.encoder_depth
                   ? Mat(d_out.cwiseProduct(pre[l].unaryExpr([](T v) { return detail::gelu_grad(v); })))
                   : d_out;
      const Mat& x = l == 0 ? in : act[l - 1];
      acc(grad, p + ".W", da * x.transpose());
      acc(grad, p + ".b", da.rowwise().sum());
      if (l > 0) d_out = w(p + ".W").transpose() * da;
    }
  }

  template <typename Derived>
  void acc(std::span<T> grad, const std::string& name, const Eigen::MatrixBase<Derived>& g) const {
    const auto& b = layout_.at(name);
    GMap(grad.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)) += g;
  }

  const ModelSpec& spec_;
  const Layout& layout_;
  std::span<const T> params_;
};

// ---------------------------------------------------------------------------
// Loss layer (always in double).

struct QueryTarget {
  double y = 0.0;
  double f_star = 0.0;
  double sigma2 = 1.0;
};

struct QueryLoss {
  double loss = 0.0;
  std::vector<double> d_logits;
  double d_log_var = 0.0;
};

/// Total objective for one query point and its gradient with respect to the
/// latent logits and the log noise variance. For the tuned variant the
/// logits are the observation PMF and only the bar term is used.
inline QueryLoss query_loss(const BinGrid& grid, std::span<const double> logits, double log_var,
                            const QueryTarget& t, const LossWeights& w, Variant variant) {
  const std::size_t k = grid.size();
  const BinPMF pi = BinPMF::from_logits(logits);
  QueryLoss out;
  out.d_logits.assign(k, 0.0);

  if (variant == Variant::tuned) {
    const std::size_t b = grid.bin_index(t.y);
    out.loss = w.lambda_y * bar_nll(grid, pi, t.y);
    if (w.lambda_y != 0.0 && pi[b] > kTransitionFloor) {
      for (std::size_t j = 0; j < k; ++j) out.d_logits[j] = w.lambda_y * pi[j];
      out.d_logits[b] -= w.lambda_y;
    }
    return out;
  }

  const double var = std::exp(log_var);
  // dL/dpi_j, then pushed through the softmax.
  std::vector<double> d_pi(k, 0.0);

  if (w.lambda_y != 0.0) {
    const TransitionMatrix tm(grid, var, true);
    const std::size_t b = grid.bin_index(t.y);
    double pb = 0.0, dpb = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      pb += pi[j] * tm(j, b);
      dpb += pi[j] * tm.dsigma(j, b);
    }
    out.loss += w.lambda_y * (-std::log(std::max(pb, kTransitionFloor)) + std::log(grid.width(b)));
    if (pb > kTransitionFloor) {
      for (std::size_t j = 0; j < k; ++j) d_pi[j] -= w.lambda_y * tm(j, b) / pb;
      // sigma = exp(log_var / 2)
      out.d_log_var -= w.lambda_y * dpb / pb * 0.5 * std::sqrt(var);
    }
  }
  if (w.lambda_f != 0.0) {
    const std::size_t b = grid.bin_index(t.f_star);
    out.loss += w.lambda_f * -std::log(std::max(pi[b], kTransitionFloor));
    if (pi[b] > kTransitionFloor) d_pi[b] -= w.lambda_f / pi[b];
  }
  if (w.lambda_sigma != 0.0) {
    const double gap = log_var - std::log(t.sigma2);
    out.loss += w.lambda_sigma * gap * gap;
    out.d_log_var += w.lambda_sigma * 2.0 * gap;
  }

  double inner = 0.0;
  for (std::size_t j = 0; j < k; ++j) inner += pi[j] * d_pi[j];
  for (std::size_t j = 0; j < k; ++j) out.d_logits[j] = pi[j] * (d_pi[j] - inner);
  return out;
}

// ---------------------------------------------------------------------------

struct ForwardOutput {
  std::vector<double> latent_logits;
  double log_noise_var = 0.0;
  std::vector<double> representation;
};

/// A supervised training task: context plus queries with privileged labels.
struct TrainTask {
  Matrix x_ctx;
  std::vector<double> y_ctx;
  Matrix x_qry;
  std::vector<double> y_qry;
  std::vector<double> f_qry;
  std::vector<double> sigma2_qry;
  std::uint64_t seed = 0;
};

/// Mean query loss over a batch and its gradient (accumulated in double).
template <typename T>
double loss_and_grad(const ModelSpec& spec, const Layout& layout, std::span<const T> params,
                     std::span<const TrainTask> batch, const LossWeights& weights,
                     std::vector<double>& grad) {
  weights.validate();
  const BinGrid grid = spec.grid();
  const Network<T> net(spec, layout, params);
  grad.assign(layout.size(), 0.0);
  std::vector<T> task_grad(layout.size());
  typename Network<T>::Cache cache;

  std::size_t n_total = 0;
  for (const auto& task : batch) n_total += task.x_qry.rows();
  if (n_total == 0) throw DomainError("loss_and_grad: batch has no query points");
  const double inv_n = 1.0 / static_cast<double>(n_total);

  double total = 0.0;
  std::vector<double> logits(spec.bins);
  for (const auto& task : batch) {
    const auto tok = make_tokens<T>(spec, task.x_ctx, task.y_ctx, task.x_qry);
    net.forward(tok, cache);
    const auto nq = static_cast<Eigen::Index>(task.x_qry.rows());
    detail::Mat<T> d_logits(static_cast<Eigen::Index>(spec.bins), nq);
    detail::RowVec<T> d_log_var = detail::RowVec<T>::Zero(nq);
    double task_loss = 0.0;
    for (Eigen::Index q = 0; q < nq; ++q) {
      for (std::size_t j = 0; j < spec.bins; ++j) {
        logits[j] = static_cast<double>(cache.logits(static_cast<Eigen::Index>(j), q));
      }
      const auto qi = static_cast<std::size_t>(q);
      const double lv = spec.variant == Variant::decoupled ? static_cast<double>(cache.log_var(q)) : 0.0;
      const QueryLoss ql = query_loss(grid, logits, lv,
                                      {task.y_qry[qi], task.f_qry[qi], task.sigma2_qry[qi]}, weights,
                                      spec.variant);
      task_loss += ql.loss;
      for (std::size_t j = 0; j < spec.bins; ++j) {
        d_logits(static_cast<Eigen::Index>(j), q) = static_cast<T>(ql.d_logits[j] * inv_n);
      }
      d_log_var(q) = static_cast<T>(ql.d_log_var * inv_n);
    }
    if (!std::isfinite(task_loss)) {
      throw NumericError("non-finite loss on task seed " + std::to_string(task.seed));
    }
    total += task_loss;
    std::fill(task_grad.begin(), task_grad.end(), T(0));
    net.backward(tok, cache, d_logits, d_log_var, task_grad);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += static_cast<double>(task_grad[i]);
  }
  return total * inv_n;
}

/// Trained or freshly initialized model with float parameters.
class Model {
 public:
  Model(ModelSpec spec, std::vector<float> params)
      : spec_(spec), layout_(spec_), params_(std::move(params)),
        grid_(std::make_shared<const BinGrid>(spec_.grid())) {
    if (params_.size() != layout_.size()) throw DomainError("Model: parameter count mismatch");
  }

  static Model random(const ModelSpec& spec, std::uint64_t seed) {
    const Layout layout(spec);
    return Model(spec, init_params(layout, seed));
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const Layout& layout() const noexcept { return layout_; }
  const std::vector<float>& params() const noexcept { return params_; }
  std::vector<float>& params() noexcept { return params_; }
  const std::shared_ptr<const BinGrid>& grid() const noexcept { return grid_; }

  /// Raw head outputs for each query row, in the model's normalized units.
  std::vector<ForwardOutput> forward(const Matrix& x_ctx, std::span<const double> y_ctx,
                                     const Matrix& x_qry) const {
    const auto tok = make_tokens<float>(spec_, x_ctx, y_ctx, x_qry);
    const Network<float> net(spec_, layout_, params_);
    Network<float>::Cache cache;
    net.forward(tok, cache);
    std::vector<ForwardOutput> out(x_qry.rows());
    for (std::size_t q = 0; q < out.size(); ++q) {
      const auto col = static_cast<Eigen::Index>(q);
      auto& o = out[q];
      o.latent_logits.resize(spec_.bins);
      for (std::size_t j = 0; j < spec_.bins; ++j) {
        o.latent_logits[j] = cache.logits(static_cast<Eigen::Index>(j), col);
      }
      o.log_noise_var = spec_.variant == Variant::decoupled ? cache.log_var(col) : 0.0;
      double norm = 0.0;
      for (Eigen::Index i = 0; i < cache.u.rows(); ++i) norm += double(cache.u(i, col)) * cache.u(i, col);
      norm = std::sqrt(norm);
      o.representation.resize(static_cast<std::size_t>(cache.u.rows()));
      for (Eigen::Index i = 0; i < cache.u.rows(); ++i) {
        o.representation[static_cast<std::size_t>(i)] = norm > 0.0 ? cache.u(i, col) / norm : 0.0;
      }
    }
    return out;
  }

  /// Binned predictive per query on the model grid. The decoupled variant
  /// convolves its latent PMF with exp(log_noise_var).
  std::vector<DecoupledPrediction> predict(const Matrix& x_ctx, std::span<const double> y_ctx,
                                           const Matrix& x_qry) const {
    auto raw = forward(x_ctx, y_ctx, x_qry);
    std::vector<DecoupledPrediction> out;
    out.reserve(raw.size());
    for (auto& o : raw) {
      BinPMF pmf = BinPMF::from_logits<double>(o.latent_logits);
      if (spec_.variant == Variant::decoupled) {
        const double var = std::max(std::exp(o.log_noise_var), kVarianceFloor);
        out.push_back(DecoupledPrediction::from_latent(grid_, std::move(pmf), var,
                                                       std::move(o.representation)));
      } else {
        out.push_back(DecoupledPrediction::observation_only(grid_, std::move(pmf),
                                                            std::move(o.representation)));
      }
    }
    return out;
  }

 private:
  ModelSpec spec_;
  Layout layout_;
  std::vector<float> params_;
  std::shared_ptr<const BinGrid> grid_;
};

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"input_dim_max", s.input_dim_max}, {"embed_dim", s.embed_dim},
                     {"n_heads", s.n_heads},             {"encoder_depth", s.encoder_depth},
                     {"bins", s.bins},                   {"grid_bound", s.grid_bound},
                     {"variant", to_string(s.variant)}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "input_dim_max") s.input_dim_max = v.get<std::size_t>();
      else if (key == "embed_dim") s.embed_dim = v.get<std::size_t>();
      else if (key == "n_heads") s.n_heads = v.get<std::size_t>();
      else if (key == "encoder_depth") s.encoder_depth = v.get<std::size_t>();
      else if (key == "bins") s.bins = v.get<std::size_t>();
      else if (key == "grid_bound") s.grid_bound = v.get<double>();
      else if (key == "variant") s.variant = parse_variant(v.get<std::string>());
      else throw ConfigError("unknown model spec key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace dbs::icl
