#pragma once

// Sobol sequence (Joe-Kuo direction numbers, first 21 dimensions) in Gray-code
// order, with an optional random digital shift.

#include <array>
#include <cstdint>
#include <vector>

#include "dbs/core/errors.hpp"
#include "dbs/core/matrix.hpp"
#include "dbs/core/rng.hpp"

namespace dbs {

class Sobol {
 public:
  static constexpr std::size_t kMaxDim = 21;
  static constexpr int kBits = 32;

  /// seed == 0 gives the unshifted sequence starting at the origin.
  Sobol(std::size_t dim, std::uint64_t seed = 0) : dim_(dim), x_(dim, 0), shift_(dim, 0) {
    if (dim < 1 || dim > kMaxDim) throw DomainError("Sobol: dimension must be in 1..21");
    v_.assign(dim, std::vector<std::uint32_t>(kBits));
    for (int b = 0; b < kBits; ++b) v_[0][b] = std::uint32_t{1} << (31 - b);
    for (std::size_t d = 1; d < dim; ++d) {
      const auto& e = kTable[d - 1];
      const int s = e.s;
      for (int i = 0; i < s; ++i) v_[d][i] = e.m[i] << (31 - i);
      for (int i = s; i < kBits; ++i) {
        std::uint32_t v = v_[d][i - s] ^ (v_[d][i - s] >> s);
        for (int k = 1; k < s; ++k) {
          if ((e.a >> (s - 1 - k)) & 1u) v ^= v_[d][i - k];
        }
        v_[d][i] = v;
      }
    }
    if (seed != 0) {
      Rng rng(seed, 0, "sobol-shift");
      for (auto& s : shift_) s = static_cast<std::uint32_t>(rng.next_u64() >> 32);
    }
  }

  std::size_t dim() const noexcept { return dim_; }

  /// Next point in [0, 1)^dim.
  std::vector<double> next() {
    std::vector<double> p(dim_);
    for (std::size_t d = 0; d < dim_; ++d) p[d] = static_cast<double>(x_[d] ^ shift_[d]) * 0x1.0p-32;
    // Gray code: flip the direction number of the lowest zero bit of the index.
    int c = 0;
    for (std::uint64_t i = index_; i & 1u; i >>= 1) ++c;
    if (c >= kBits) throw DomainError("Sobol: sequence exhausted");
    for (std::size_t d = 0; d < dim_; ++d) x_[d] ^= v_[d][c];
    ++index_;
    return p;
  }

  /// n points scaled to the box [lo, hi].
  Matrix points(std::size_t n, std::span<const double> lo, std::span<const double> hi) {
    Matrix out(n, dim_);
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = next();
      for (std::size_t d = 0; d < dim_; ++d) out(i, d) = lo[d] + (hi[d] - lo[d]) * p[d];
    }
    return out;
  }

 private:
  struct Entry {
    int s;
    std::uint32_t a;
    std::array<std::uint32_t, 7> m;
  };

  // Joe & Kuo (2008), new-joe-kuo-6.21201, dimensions 2..21.
  static constexpr std::array<Entry, 20> kTable{{
      {1, 0, {1}},
      {2, 1, {1, 3}},
      {3, 1, {1, 3, 1}},
      {3, 2, {1, 1, 1}},
      {4, 1, {1, 1, 3, 3}},
      {4, 4, {1, 3, 5, 13}},
      {5, 2, {1, 1, 5, 5, 17}},
      {5, 4, {1, 1, 5, 5, 5}},
      {5, 7, {1, 1, 7, 11, 19}},
      {5, 11, {1, 1, 5, 1, 1}},
      {5, 13, {1, 1, 1, 3, 11}},
      {5, 14, {1, 3, 5, 5, 31}},
      {6, 1, {1, 3, 3, 9, 7, 49}},
      {6, 13, {1, 1, 1, 15, 21, 21}},
      {6, 16, {1, 3, 1, 13, 27, 49}},
      {6, 19, {1, 1, 1, 15, 7, 5}},
      {6, 22, {1, 3, 1, 15, 13, 25}},
      {6, 25, {1, 1, 5, 5, 19, 61}},
      {7, 1, {1, 3, 7, 11, 23, 15, 103}},
      {7, 4, {1, 3, 7, 13, 13, 15, 69}},
  }};

  std::size_t dim_;
  std::vector<std::vector<std::uint32_t>> v_;
  std::vector<std::uint32_t> x_;
  std::vector<std::uint32_t> shift_;
  std::uint64_t index_ = 0;
};

}  // namespace dbs
