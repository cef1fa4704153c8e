#pragma once

// Rank aggregation over per-method summary files.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dbs/core/errors.hpp"
#include "dbs/harness/jsonl.hpp"

namespace dbs::harness {

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Ranks of `values` (lower is better, 1-based); exact ties share the mean
/// of the ranks they span.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

enum class RankScope {
  common,     // only benchmarks where every method has a value
  available,  // each method averaged over the benchmarks where it has a value
};

struct RankTable {
  std::vector<std::string> methods, benchmarks;
  // [method][benchmark]; empty when the cell is missing or has too few seeds.
  std::vector<std::vector<std::optional<double>>> value, rank;
  std::vector<std::vector<std::size_t>> n_seeds;
  std::vector<std::optional<double>> avg_rank;
  std::vector<std::string> warnings;

  /// Method indices by average rank, unranked methods last.
  std::vector<std::size_t> order() const {
    std::vector<std::size_t> o(methods.size());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = i;
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
      if (avg_rank[a] && avg_rank[b]) return *avg_rank[a] < *avg_rank[b];
      return avg_rank[a].has_value() && !avg_rank[b].has_value();
    });
    return o;
  }
};

/// values[m][b]: the per-cell statistic (e.g. median final regret), empty
/// when unavailable.
inline RankTable aggregate_ranks(std::vector<std::string> methods, std::vector<std::string> benchmarks,
                                 std::vector<std::vector<std::optional<double>>> values,
                                 RankScope scope = RankScope::common) {
  const std::size_t nm = methods.size(), nb = benchmarks.size();
  if (values.size() != nm) throw DomainError("aggregate_ranks: value rows do not match methods");
  for (const auto& row : values) {
    if (row.size() != nb) throw DomainError("aggregate_ranks: value columns do not match benchmarks");
  }
  RankTable t;
  t.methods = std::move(methods);
  t.benchmarks = std::move(benchmarks);
  t.value = std::move(values);
  t.rank.assign(nm, std::vector<std::optional<double>>(nb));
  t.n_seeds.assign(nm, std::vector<std::size_t>(nb, 0));
  t.avg_rank.assign(nm, std::nullopt);

  if (nm < 2) throw DomainError("aggregate_ranks: need at least 2 methods");
  std::vector<bool> use(nb, true);
  std::size_t usable = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    std::size_t have = 0;
    for (std::size_t m = 0; m < nm; ++m) have += t.value[m][b].has_value() ? 1 : 0;
    if (scope == RankScope::common && have < nm) {
      use[b] = false;
      t.warnings.push_back("benchmark " + t.benchmarks[b] + " lacks results for some methods; left out of the ranking");
    }
    if (use[b] && have < 2) {
      use[b] = false;
      if (have == 1) t.warnings.push_back("benchmark " + t.benchmarks[b] + " has a single method; left out of the ranking");
    }
    usable += use[b];
  }
  if (usable == 0) {
    throw DomainError(scope == RankScope::common
                          ? "aggregate_ranks: no benchmark has results for every method (the available scope ranks partial tables)"
                          : "aggregate_ranks: no benchmark has results for 2 or more methods");
  }

  std::vector<double> sum(nm, 0.0);
  std::vector<std::size_t> count(nm, 0);
  for (std::size_t b = 0; b < nb; ++b) {
    if (!use[b]) continue;
    std::vector<std::size_t> who;
    std::vector<double> vals;
    for (std::size_t m = 0; m < nm; ++m) {
      if (t.value[m][b]) {
        who.push_back(m);
        vals.push_back(*t.value[m][b]);
      }
    }
    const auto r = average_ranks(vals);
    for (std::size_t i = 0; i < who.size(); ++i) {
      t.rank[who[i]][b] = r[i];
      sum[who[i]] += r[i];
      ++count[who[i]];
    }
  }
  for (std::size_t m = 0; m < nm; ++m) {
    if (count[m]) t.avg_rank[m] = sum[m] / static_cast<double>(count[m]);
  }
  return t;
}

/// Reads <root>/runs/<benchmark>/<method>/summary.csv and takes the median
/// of `column` over successful seeds; cells with fewer than `min_seeds`
/// successful seeds are left empty.
inline RankTable aggregate_run_dir(const fs::path& root, const std::string& column = "final_regret",
                                   std::size_t min_seeds = 5, RankScope scope = RankScope::common) {
  const fs::path runs = root / "runs";
  if (!fs::is_directory(runs)) throw ConfigError("no runs directory under " + root.string());
  std::map<std::string, std::map<std::string, std::vector<double>>> cells;  // method -> benchmark -> values
  std::vector<std::string> benches;
  for (const auto& bdir : fs::directory_iterator(runs)) {
    if (!bdir.is_directory()) continue;
    bool any = false;
    for (const auto& mdir : fs::directory_iterator(bdir.path())) {
      const fs::path csv = mdir.path() / "summary.csv";
      if (!fs::exists(csv)) continue;
      std::ifstream in(csv);
      std::string line;
      std::getline(in, line);
      std::vector<std::string> head;
      {
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) head.push_back(c);
      }
      const auto col = std::find(head.begin(), head.end(), column);
      const auto st = std::find(head.begin(), head.end(), "status");
      if (col == head.end() || st == head.end()) continue;
      auto& vals = cells[mdir.path().filename().string()][bdir.path().filename().string()];
      any = true;
      while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
        const auto ci = static_cast<std::size_t>(col - head.begin()), si = static_cast<std::size_t>(st - head.begin());
        if (f.size() <= std::max(ci, si) || f[si] != "ok" || f[ci] == "nan") continue;
        vals.push_back(std::stod(f[ci]));
      }
    }
    if (any) benches.push_back(bdir.path().filename().string());
  }
  std::sort(benches.begin(), benches.end());
  std::vector<std::string> methods;
  for (const auto& [m, _] : cells) methods.push_back(m);
  std::vector<std::vector<std::optional<double>>> values(methods.size(), std::vector<std::optional<double>>(benches.size()));
  std::vector<std::vector<std::size_t>> counts(methods.size(), std::vector<std::size_t>(benches.size(), 0));
  std::vector<std::string> notes;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t b = 0; b < benches.size(); ++b) {
      const auto& bm = cells[methods[m]];
      const auto it = bm.find(benches[b]);
      if (it == bm.end()) continue;
      counts[m][b] = it->second.size();
      if (it->second.size() >= min_seeds) {
        values[m][b] = median(it->second);
      } else {
        notes.push_back(methods[m] + " on " + benches[b] + ": only " + std::to_string(it->second.size()) + " seeds");
      }
    }
  }
  auto t = aggregate_ranks(methods, benches, values, scope);
  t.n_seeds = counts;
  t.warnings.insert(t.warnings.begin(), notes.begin(), notes.end());
  return t;
}

inline std::string rank_csv(const RankTable& t) {
  std::ostringstream out;
  out << "method";
  for (const auto& b : t.benchmarks) out << ',' << b << "_median," << b << "_rank";
  out << ",avg_rank\n";
  const auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  for (std::size_t m : t.order()) {
    out << t.methods[m];
    for (std::size_t b = 0; b < t.benchmarks.size(); ++b) out << ',' << opt(t.value[m][b]) << ',' << opt(t.rank[m][b]);
    out << ',' << opt(t.avg_rank[m]) << '\n';
  }
  return out.str();
}

inline std::string rank_text(const RankTable& t) {
  std::size_t w = 6;
  for (const auto& m : t.methods) w = std::max(w, m.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(w)) << "method";
  for (const auto& b : t.benchmarks) out << "  " << std::right << std::setw(std::max<int>(12, static_cast<int>(b.size()))) << b;
  out << "  " << std::setw(8) << "avg_rank" << '\n';
  for (std::size_t m : t.order()) {
    out << std::left << std::setw(static_cast<int>(w)) << t.methods[m];
    for (std::size_t b = 0; b < t.benchmarks.size(); ++b) {
      std::ostringstream cell;
      if (t.value[m][b]) cell << std::setprecision(4) << *t.value[m][b];
      else cell << "--";
      out << "  " << std::right << std::setw(std::max<int>(12, static_cast<int>(t.benchmarks[b].size()))) << cell.str();
    }
    std::ostringstream r;
    if (t.avg_rank[m]) r << std::fixed << std::setprecision(2) << *t.avg_rank[m];
    else r << "--";
    out << "  " << std::setw(8) << r.str() << '\n';
  }
  return out.str();
}

}  // namespace dbs::harness
