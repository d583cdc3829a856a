// SPDX-License-Identifier: Apache-2.0
/**
 * @file   rng.hpp
 * @brief  Portable seeded random source.
 *
 * Algorithm: std::mt19937_64 (fully specified by the standard) drives
 * 53-bit uniforms u = (x >> 11) * 2^-53, and normals come from the
 * Box-Muller cosine branch on (1 - u1, u2). std:: distributions are not
 * used because their output is implementation-defined.
 */
#ifndef DTWIN_RNG_HPP
#define DTWIN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace dtwin {

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
  std::mt19937_64 engine_;
};

} // namespace dtwin

#endif // DTWIN_RNG_HPP
