#pragma once

// Synthetic heteroscedastic regression tasks with privileged labels: a latent
// function drawn from a GP / MLP-SCM / Tree-SCM mixture, an input-dependent
// noise field, and context-normalized observations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dbs/core/errors.hpp"
#include "dbs/core/matrix.hpp"
#include "dbs/core/rng.hpp"
#include "json.hpp"

namespace dbs {

struct IntRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const RealRange&, const RealRange&) = default;
};

struct TaskPriorConfig {
  IntRange dim_range{1, 16};
  IntRange seq_len_range{25, 256};
  int n_queries = 24;
  double p_gp = 0.2;
  double p_mlp_given_scm = 0.7;
  RealRange s0_range{0.03, 0.12};
  double p_hetero = 0.8;
  double noise_floor = 0.005;
  double floor_frac = 0.1;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_gp) || !prob(p_mlp_given_scm) || !prob(p_hetero)) {
      throw DomainError("TaskPriorConfig: probabilities must lie in [0, 1]");
    }
    if (dim_range.lo < 1 || dim_range.hi < dim_range.lo) {
      throw DomainError("TaskPriorConfig: bad dim_range");
    }
    if (seq_len_range.lo < 2 || seq_len_range.hi < seq_len_range.lo) {
      throw DomainError("TaskPriorConfig: bad seq_len_range");
    }
    if (n_queries < 1 || n_queries >= seq_len_range.lo) {
      throw DomainError("TaskPriorConfig: need 1 <= n_queries < min sequence length");
    }
    if (!(s0_range.lo > 0.0) || s0_range.hi < s0_range.lo) {
      throw DomainError("TaskPriorConfig: bad s0_range");
    }
    if (!(noise_floor > 0.0) || !(floor_frac >= 0.0)) {
      throw DomainError("TaskPriorConfig: noise_floor must be positive, floor_frac nonnegative");
    }
  }
};

enum class LatentFamily { gp, mlp_scm, tree_scm };

inline const char* to_string(LatentFamily f) {
  switch (f) {
    case LatentFamily::gp: return "gp";
    case LatentFamily::mlp_scm: return "mlp_scm";
    case LatentFamily::tree_scm: return "tree_scm";
  }
  return "?";
}

/// One task in normalized units. Rows [0, n_context) are context, the rest
/// are queries. f and sigma2 are the privileged labels.
struct SyntheticTask {
  Matrix X;
  std::vector<double> f;
  std::vector<double> sigma2;
  std::vector<double> y;
  std::size_t n_context = 0;
  bool hetero_flag = false;
  std::uint64_t rng_seed = 0;
  LatentFamily family = LatentFamily::gp;

  std::size_t n() const noexcept { return y.size(); }
  std::size_t dim() const noexcept { return X.cols(); }
  std::size_t n_queries() const noexcept { return n() - n_context; }
};

/// sd(x) = base_sd * max(floor_frac, w_sig*sigmoid(alpha(x_c - t))
///         + w_bump*exp(-(x_c - mu_b)^2 / (2 rho^2))
///         + w_sin*(1 + sin(omega x_c + phi))/2 + w_floor), clipped at noise_floor.
struct NoiseField {
  double base_sd = 0.05;
  std::size_t coord = 0;
  double w_sig = 0.0, alpha = 1.0, t = 0.0;
  double w_bump = 0.0, mu_b = 0.0, rho = 1.0;
  double w_sin = 0.0, omega = 1.0, phi = 0.0;
  double w_floor = 1.0;
  double floor_frac = 0.1;
  double noise_floor = 0.005;

  static NoiseField constant(double sd, double noise_floor = 0.005) {
    NoiseField nf;
    nf.base_sd = sd;
    nf.noise_floor = noise_floor;
    return nf;
  }
};

inline double eval_noise_field(const NoiseField& nf, std::span<const double> x) {
  const double xc = x[nf.coord];
  double m = nf.w_floor;
  if (nf.w_sig != 0.0) m += nf.w_sig / (1.0 + std::exp(-nf.alpha * (xc - nf.t)));
  if (nf.w_bump != 0.0) {
    const double u = (xc - nf.mu_b) / nf.rho;
    m += nf.w_bump * std::exp(-0.5 * u * u);
  }
  if (nf.w_sin != 0.0) m += nf.w_sin * 0.5 * (1.0 + std::sin(nf.omega * xc + nf.phi));
  return std::max(nf.base_sd * std::max(nf.floor_frac, m), nf.noise_floor);
}

inline NoiseField sample_noise_field(Rng& rng, std::size_t dim, double base_sd, bool hetero,
                                     const TaskPriorConfig& cfg) {
  NoiseField nf;
  nf.base_sd = base_sd;
  nf.floor_frac = cfg.floor_frac;
  nf.noise_floor = cfg.noise_floor;
  if (!hetero) return nf;

  nf.coord = rng.index(dim);
  bool active[3];
  do {
    for (bool& a : active) a = rng.bernoulli(0.7);
  } while (!active[0] && !active[1] && !active[2]);

  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  nf.alpha = sign * rng.uniform(1.0, 4.0);
  nf.t = rng.uniform(-1.0, 1.0);
  nf.mu_b = rng.uniform(-1.5, 1.5);
  nf.rho = rng.uniform(0.2, 1.0);
  nf.omega = rng.uniform(1.0, 4.0);
  nf.phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  nf.w_sig = active[0] ? rng.uniform(0.2, 0.85) : 0.0;
  nf.w_bump = active[1] ? rng.uniform(0.2, 0.85) : 0.0;
  nf.w_sin = active[2] ? rng.uniform(0.2, 0.85) : 0.0;
  nf.w_floor = rng.uniform(0.1, 0.45);
  return nf;
}

// ---------------------------------------------------------------------------
// Latent function families

/// f(x) = A sqrt(2/M) sum_m w_m cos(omega_m.x / l + b_m), an RBF-GP draw.
inline std::vector<double> sample_latent_rff_gp(const Matrix& x, double lengthscale,
                                                double amplitude, std::size_t n_features,
                                                std::uint64_t seed) {
  if (n_features < 1) throw DomainError("rff: need at least one feature");
  if (!(lengthscale > 0.0) || !(amplitude > 0.0)) {
    throw DomainError("rff: lengthscale and amplitude must be positive");
  }
  Rng rng(seed, 0, "rff");
  const std::size_t d = x.cols();
  Matrix omega(n_features, d);
  std::vector<double> b(n_features), w(n_features);
  for (std::size_t m = 0; m < n_features; ++m) {
    for (std::size_t k = 0; k < d; ++k) omega(m, k) = rng.normal();
    b[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w[m] = rng.normal();
  }
  const double scale = amplitude * std::sqrt(2.0 / static_cast<double>(n_features));
  std::vector<double> f(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t m = 0; m < n_features; ++m) {
      double proj = 0.0;
      for (std::size_t k = 0; k < d; ++k) proj += omega(m, k) * x(i, k);
      s += w[m] * std::cos(proj / lengthscale + b[m]);
    }
    f[i] = scale * s;
  }
  return f;
}

/// Random DAG of tanh perceptron nodes over the inputs, read out linearly.
/// Hidden node h sees each input and each earlier hidden node with
/// probability 1/2 (at least one parent).
inline std::vector<double> sample_latent_mlp_scm(const Matrix& x, std::uint64_t seed,
                                                 std::optional<int> hidden_nodes = {}) {
  Rng rng(seed, 0, "mlp-scm");
  const std::size_t d = x.cols(), n = x.rows();
  const int h = hidden_nodes ? *hidden_nodes : static_cast<int>(rng.uniform_int(1, 4));
  if (h < 0) throw DomainError("mlp-scm: negative hidden node count");

  // nodes[v] holds node v's values over all rows; inputs first.
  std::vector<std::vector<double>> nodes(d, std::vector<double>(n));
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) nodes[k][i] = x(i, k);
  }

  for (int node = 0; node < h; ++node) {
    std::vector<std::size_t> parents;
    for (std::size_t v = 0; v < nodes.size(); ++v) {
      if (rng.bernoulli(0.5)) parents.push_back(v);
    }
    if (parents.empty()) parents.push_back(rng.index(nodes.size()));

    const auto width = static_cast<std::size_t>(rng.uniform_int(4, 16));
    const double gain = rng.uniform(0.5, 2.0) / std::sqrt(static_cast<double>(parents.size()));
    const double out_scale = 1.0 / std::sqrt(static_cast<double>(width));
    std::vector<double> value(n, 0.0);
    std::vector<double> wi(parents.size());
    for (std::size_t u = 0; u < width; ++u) {
      for (double& v : wi) v = gain * rng.normal();
      const double bias = rng.normal();
      const double vout = out_scale * rng.normal();
      for (std::size_t i = 0; i < n; ++i) {
        double a = bias;
        for (std::size_t p = 0; p < parents.size(); ++p) a += wi[p] * nodes[parents[p]][i];
        value[i] += vout * std::tanh(a);
      }
    }
    nodes.push_back(std::move(value));
  }

  const double read_scale = 1.0 / std::sqrt(static_cast<double>(nodes.size()));
  std::vector<double> f(n, rng.normal());
  for (const auto& node : nodes) {
    const double c = read_scale * rng.normal();
    for (std::size_t i = 0; i < n; ++i) f[i] += c * node[i];
  }
  return f;
}

/// Complete axis-aligned tree of the given depth; thresholds uniform within
/// the observed range of the split column, leaves N(0, 1).
inline std::vector<double> sample_latent_tree_scm(const Matrix& x, std::uint64_t seed,
                                                  std::optional<int> depth_override = {}) {
  Rng rng(seed, 0, "tree-scm");
  const std::size_t d = x.cols(), n = x.rows();
  const int depth = depth_override ? *depth_override : static_cast<int>(rng.uniform_int(2, 5));
  if (depth < 0 || depth > 20) throw DomainError("tree-scm: depth out of range");

  std::vector<double> lo(d, INFINITY), hi(d, -INFINITY);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      lo[k] = std::min(lo[k], x(i, k));
      hi[k] = std::max(hi[k], x(i, k));
    }
  }

  // Heap layout: internal nodes 0 .. 2^depth - 2, then the leaves.
  const std::size_t n_internal = (std::size_t{1} << depth) - 1;
  std::vector<std::size_t> split_coord(n_internal);
  std::vector<double> split_at(n_internal);
  for (std::size_t v = 0; v < n_internal; ++v) {
    split_coord[v] = rng.index(d);
    split_at[v] = rng.uniform(lo[split_coord[v]], hi[split_coord[v]]);
  }
  std::vector<double> leaf(n_internal + 1);
  for (double& l : leaf) l = rng.normal();

  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t v = 0;
    while (v < n_internal) v = 2 * v + (x(i, split_coord[v]) < split_at[v] ? 1 : 2);
    f[i] = leaf[v - n_internal];
  }
  return f;
}

// ---------------------------------------------------------------------------

namespace detail {

struct MeanStd {
  double mean = 0.0;
  double sd = 1.0;
};

// Population mean and standard deviation of v[first, last).
inline MeanStd mean_std(std::span<const double> v) {
  double m = 0.0;
  for (double a : v) m += a;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double a : v) s += (a - m) * (a - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace detail

/// Seed of task `index` in a stream of tasks derived from `experiment_seed`.
inline std::uint64_t task_seed(std::uint64_t experiment_seed, std::uint64_t index) {
  return derive_key(experiment_seed, index, hash_tag("task"));
}

/// Draws one task. Inputs are U[0,1]^d z-scored per feature over all n rows;
/// the latent is standardized before noise is added, so base noise levels
/// are relative to unit signal; targets are then normalized by the context
/// mean and standard deviation.
inline SyntheticTask sample_task(const TaskPriorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng shape(seed, 0, "task-shape");
  const auto d = static_cast<std::size_t>(shape.uniform_int(cfg.dim_range.lo, cfg.dim_range.hi));
  const auto n =
      static_cast<std::size_t>(shape.uniform_int(cfg.seq_len_range.lo, cfg.seq_len_range.hi));
  LatentFamily family;
  if (shape.bernoulli(cfg.p_gp)) {
    family = LatentFamily::gp;
  } else {
    family = shape.bernoulli(cfg.p_mlp_given_scm) ? LatentFamily::mlp_scm : LatentFamily::tree_scm;
  }
  const bool hetero = shape.bernoulli(cfg.p_hetero);
  const double s0 = shape.uniform(cfg.s0_range.lo, cfg.s0_range.hi);

  SyntheticTask task;
  task.rng_seed = seed;
  task.family = family;
  task.hetero_flag = hetero;
  task.n_context = n - static_cast<std::size_t>(cfg.n_queries);

  Rng inputs(seed, 0, "task-inputs");
  task.X = Matrix(n, d);
  for (double& v : task.X.data()) v = inputs.uniform();
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = task.X(i, k);
    auto [m, s] = detail::mean_std(col);
    if (!(s > 1e-12)) s = 1.0;
    for (std::size_t i = 0; i < n; ++i) task.X(i, k) = (task.X(i, k) - m) / s;
  }

  const std::uint64_t latent_seed = derive_key(seed, 0, hash_tag("task-latent"));
  std::vector<double> f;
  switch (family) {
    case LatentFamily::gp: {
      Rng hyper(seed, 0, "task-gp-hyper");
      const double ell = hyper.log_uniform(0.3, 2.0) * std::sqrt(static_cast<double>(d));
      f = sample_latent_rff_gp(task.X, ell, 1.0, 256, latent_seed);
      break;
    }
    case LatentFamily::mlp_scm: f = sample_latent_mlp_scm(task.X, latent_seed); break;
    case LatentFamily::tree_scm: f = sample_latent_tree_scm(task.X, latent_seed); break;
  }
  {
    auto [m, s] = detail::mean_std(f);
    if (!(s > 1e-12)) s = 1.0;
    for (double& v : f) v = (v - m) / s;
  }

  Rng field_rng(seed, 0, "task-noise-field");
  const NoiseField field = sample_noise_field(field_rng, d, s0, hetero, cfg);
  Rng eps(seed, 0, "task-noise");
  std::vector<double> sd(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    sd[i] = eval_noise_field(field, task.X.row(i));
    y[i] = f[i] + sd[i] * eps.normal();
  }

  const auto ctx = detail::mean_std(std::span<const double>(y).first(task.n_context));
  const double scale = ctx.sd > 1e-12 ? ctx.sd : 1.0;
  const double floor2 = cfg.noise_floor * cfg.noise_floor;
  task.y.resize(n);
  task.f.resize(n);
  task.sigma2.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    task.y[i] = (y[i] - ctx.mean) / scale;
    task.f[i] = (f[i] - ctx.mean) / scale;
    const double s = sd[i] / scale;
    task.sigma2[i] = std::max(s * s, floor2);
  }
  return task;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const TaskPriorConfig& c) {
  j = nlohmann::json{{"dim_range", {c.dim_range.lo, c.dim_range.hi}},
                     {"seq_len_range", {c.seq_len_range.lo, c.seq_len_range.hi}},
                     {"n_queries", c.n_queries},
                     {"p_gp", c.p_gp},
                     {"p_mlp_given_scm", c.p_mlp_given_scm},
                     {"s0_range", {c.s0_range.lo, c.s0_range.hi}},
                     {"p_hetero", c.p_hetero},
                     {"noise_floor", c.noise_floor},
                     {"floor_frac", c.floor_frac}};
}

/// Missing keys keep their defaults; unknown keys are a ConfigError.
inline void from_json(const nlohmann::json& j, TaskPriorConfig& c) {
  if (!j.is_object()) throw ConfigError("task prior config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dim_range") {
        c.dim_range = {value.at(0).get<int>(), value.at(1).get<int>()};
      } else if (key == "seq_len_range") {
        c.seq_len_range = {value.at(0).get<int>(), value.at(1).get<int>()};
      } else if (key == "s0_range") {
        c.s0_range = {value.at(0).get<double>(), value.at(1).get<double>()};
      } else if (key == "n_queries") {
        c.n_queries = value.get<int>();
      } else if (key == "p_gp") {
        c.p_gp = value.get<double>();
      } else if (key == "p_mlp_given_scm") {
        c.p_mlp_given_scm = value.get<double>();
      } else if (key == "p_hetero") {
        c.p_hetero = value.get<double>();
      } else if (key == "noise_floor") {
        c.noise_floor = value.get<double>();
      } else if (key == "floor_frac") {
        c.floor_frac = value.get<double>();
      } else {
        throw ConfigError("unknown task prior key: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task prior config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

inline void to_json(nlohmann::json& j, const SyntheticTask& t) {
  std::vector<std::vector<double>> rows(t.n());
  for (std::size_t i = 0; i < t.n(); ++i) rows[i].assign(t.X.row(i).begin(), t.X.row(i).end());
  j = nlohmann::json{{"seed", t.rng_seed},   {"d", t.dim()},         {"n", t.n()},
                     {"n_context", t.n_context}, {"X", rows},       {"f", t.f},
                     {"sigma2", t.sigma2},   {"y", t.y},             {"hetero_flag", t.hetero_flag},
                     {"family", to_string(t.family)}};
}

}  // namespace dbs
