// SPDX-License-Identifier: Apache-2.0
// Finite-difference check of the recovery loss gradients.
#ifndef DTWIN_TOOLS_GRADCHECK_HPP
#define DTWIN_TOOLS_GRADCHECK_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dtwin::cli {

struct GradcheckConfig {
  std::size_t hidden = 4;
  std::size_t state = 2;
  std::size_t input = 1;
  std::size_t samples = 8;
  /// Distinct coordinates drawn from flow parameters and theta together.
  std::size_t coordinates = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-6;
  /// Test hook: perturbs every analytic component so the check must fail.
  bool corrupt_gradient = false;

  /// Rejects instances too large for a quick check.
  void validate() const;
};

struct GradcheckEntry {
  std::string group; ///< "flow" or "theta"
  std::size_t index;
  double analytic;
  double numeric;
  double relative_error;
};

struct GradcheckResult {
  bool pass = false;
  double max_relative_error = 0.0;
  std::vector<GradcheckEntry> entries;
};

/**
 * Builds a random instance (flow, order-2 library model, nonuniform grid,
 * first channel observed) and compares analytic gradients of
 * recon + physics + sparsity against central differences.
 * relative_error = |a - fd| / max(|a|, |fd|, 1e-3).
 */
GradcheckResult run_gradcheck(const GradcheckConfig &config);

} // namespace dtwin::cli

#endif // DTWIN_TOOLS_GRADCHECK_HPP
