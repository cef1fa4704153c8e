#pragma once

// Sequential LCB on the one-dimensional teaser task, once with the
// epistemic moments and once with the total moments.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "dbs/acquisition.hpp"
#include "dbs/benchmarks.hpp"
#include "dbs/harness/jsonl.hpp"
#include "dbs/surrogate.hpp"

namespace dbs::harness {

struct TeaserOptions {
  std::size_t n_select = 20;
  std::size_t grid = 512;
  double beta = 2.0;
};

struct TeaserTrace {
  Source source = Source::epistemic;
  std::vector<double> x, y;
  std::size_t in_gap = 0;
  std::size_t in_high_noise = 0;

  double gap_fraction() const { return x.empty() ? 0.0 : static_cast<double>(in_gap) / static_cast<double>(x.size()); }
};

struct TeaserResult {
  std::uint64_t seed = 0;
  TeaserTrace epistemic, total;
  std::string curve_csv;   // x, latent, posterior mean, epistemic and noise bands
  std::string points_csv;  // context and selected points
};

inline Matrix teaser_grid(std::size_t n) {
  Matrix g(n, 1);
  for (std::size_t i = 0; i < n; ++i) g(i, 0) = n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

inline TeaserTrace teaser_trace(const TeaserTask& task, std::uint64_t seed, Source source, const TeaserOptions& opt = {}) {
  const auto ctx = task.context(seed);
  Matrix x = ctx.x;
  std::vector<double> y = ctx.y, noise;
  for (std::size_t i = 0; i < x.rows(); ++i) noise.push_back(task.noise_var(x(i, 0)));
  const Matrix grid = teaser_grid(opt.grid);
  std::vector<double> grid_noise;
  for (std::size_t i = 0; i < grid.rows(); ++i) grid_noise.push_back(task.noise_var(grid(i, 0)));

  GpSurrogate gp;
  TeaserTrace tr;
  tr.source = source;
  for (std::size_t step = 1; step <= opt.n_select; ++step) {
    gp.condition(x, y, noise);
    const auto sums = gp.summarize(grid, grid_noise);
    std::vector<double> score(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
      const Moments m = moments(sums[i], source);
      score[i] = lcb(m.mu, m.v, opt.beta);
    }
    const double xs = grid(argmin(score), 0);
    const double ys = task.observe(xs, seed, step);
    tr.x.push_back(xs);
    tr.y.push_back(ys);
    tr.in_gap += task.in_gap(xs) ? 1 : 0;
    tr.in_high_noise += task.in_high_noise(xs) ? 1 : 0;
    const double row[1] = {xs};
    x.append_row(row);
    y.push_back(ys);
    noise.push_back(task.noise_var(xs));
  }
  return tr;
}

inline TeaserResult teaser_demo(std::uint64_t seed, const TeaserOptions& opt = {}) {
  const TeaserTask task;
  TeaserResult r;
  r.seed = seed;
  r.epistemic = teaser_trace(task, seed, Source::epistemic, opt);
  r.total = teaser_trace(task, seed, Source::total, opt);

  const auto ctx = task.context(seed);
  std::vector<double> noise;
  for (std::size_t i = 0; i < ctx.x.rows(); ++i) noise.push_back(task.noise_var(ctx.x(i, 0)));
  GpSurrogate gp;
  gp.condition(ctx.x, ctx.y, noise);
  const Matrix grid = teaser_grid(opt.grid);
  std::vector<double> grid_noise;
  for (std::size_t i = 0; i < grid.rows(); ++i) grid_noise.push_back(task.noise_var(grid(i, 0)));
  const auto sums = gp.summarize(grid, grid_noise);

  std::ostringstream c;
  c << "x,latent,mean,epi_lo,epi_hi,noise_lo,noise_hi,in_gap\n";
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    const double xv = grid(i, 0);
    const double se = std::sqrt(std::max(sums[i].v_epi, 0.0));
    const double sn = task.noise_sd(xv);
    c << fmt_double(xv) << ',' << fmt_double(TeaserTask::latent(xv)) << ',' << fmt_double(sums[i].mu_f) << ','
      << fmt_double(sums[i].mu_f - 2.0 * se) << ',' << fmt_double(sums[i].mu_f + 2.0 * se) << ','
      << fmt_double(TeaserTask::latent(xv) - 2.0 * sn) << ',' << fmt_double(TeaserTask::latent(xv) + 2.0 * sn) << ','
      << (task.in_gap(xv) ? 1 : 0) << '\n';
  }
  r.curve_csv = c.str();

  std::ostringstream p;
  p << "kind,order,x,y\n";
  for (std::size_t i = 0; i < ctx.x.rows(); ++i) p << "context," << i << ',' << fmt_double(ctx.x(i, 0)) << ',' << fmt_double(ctx.y[i]) << '\n';
  for (const auto* tr : {&r.epistemic, &r.total}) {
    for (std::size_t i = 0; i < tr->x.size(); ++i) {
      p << "lcb-" << to_string(tr->source) << ',' << i + 1 << ',' << fmt_double(tr->x[i]) << ',' << fmt_double(tr->y[i]) << '\n';
    }
  }
  r.points_csv = p.str();
  return r;
}

/// Runs every seed and writes <root>/teaser/seed_<s>/{curve,points}.csv and
/// <root>/teaser/summary.csv.
inline std::vector<TeaserResult> run_teaser(const std::vector<std::uint64_t>& seeds, const fs::path& root,
                                            const TeaserOptions& opt = {}) {
  std::vector<TeaserResult> out;
  std::ostringstream s;
  s << "seed,epi_gap_fraction,total_gap_fraction,epi_high_noise,total_high_noise\n";
  for (auto seed : seeds) {
    auto r = teaser_demo(seed, opt);
    const fs::path dir = root / "teaser" / ("seed_" + std::to_string(seed));
    write_text(dir / "curve.csv", r.curve_csv);
    write_text(dir / "points.csv", r.points_csv);
    s << seed << ',' << fmt_double(r.epistemic.gap_fraction()) << ',' << fmt_double(r.total.gap_fraction()) << ','
      << r.epistemic.in_high_noise << ',' << r.total.in_high_noise << '\n';
    out.push_back(std::move(r));
  }
  write_text(root / "teaser" / "summary.csv", s.str());
  return out;
}

}  // namespace dbs::harness
