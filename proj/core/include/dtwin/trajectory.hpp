// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trajectory.hpp
 * @brief  Sampled multivariate time series with inputs and an observability mask.
 */
#ifndef DTWIN_TRAJECTORY_HPP
#define DTWIN_TRAJECTORY_HPP

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dtwin/linalg.hpp"

namespace dtwin {

enum class TimeUnit { Seconds, Minutes };

std::string_view to_string(TimeUnit unit);
TimeUnit time_unit_from_string(std::string_view text);

/**
 * N samples of an n-state, m-input system.
 *
 * Hidden channels (mask false) keep their values so tests can compare
 * against them, but losses must never read them.
 */
struct Trajectory {
  Vector times;  ///< N, strictly increasing
  Matrix states; ///< N x n
  Matrix inputs; ///< N x m (m may be 0)
  std::vector<bool> mask;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  TimeUnit time_unit = TimeUnit::Seconds;

  std::size_t samples() const { return static_cast<std::size_t>(times.size()); }
  std::size_t state_dim() const { return static_cast<std::size_t>(states.cols()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs.cols()); }
  std::size_t observed_count() const;
  double duration() const { return times(times.size() - 1) - times(0); }

  /// Throws ArgumentError/StructuralError when an invariant is broken.
  void validate() const;
};

/// Writes `t,<states>,<inputs>,<mask_<state>>` rows with round-trip precision.
void write_trajectory_csv(std::ostream &out, const Trajectory &traj);
void write_trajectory_csv(const std::string &path, const Trajectory &traj);

/// Inverse of write_trajectory_csv. The number of `mask_` columns fixes n.
Trajectory read_trajectory_csv(std::istream &in);
Trajectory read_trajectory_csv(const std::string &path);

} // namespace dtwin

#endif // DTWIN_TRAJECTORY_HPP
