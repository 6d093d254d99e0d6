#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "kpl/numerics.hpp"

namespace kpl {

// Seeded generator whose streams are identical on every platform: the
// engine is fully specified by the standard and the transforms below are
// spelled out rather than delegated to library distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// rows x cols matrix with i.i.d. U[lo, hi) entries.
inline Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                             double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

}  // namespace kpl
