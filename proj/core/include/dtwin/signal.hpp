// SPDX-License-Identifier: Apache-2.0
/**
 * @file   signal.hpp
 * @brief  Synthetic measurement corruption and OhioT1D-shaped CSV ingestion.
 */
#ifndef DTWIN_SIGNAL_HPP
#define DTWIN_SIGNAL_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dtwin/trajectory.hpp"

namespace dtwin {

/**
 * Additive Gaussian measurement noise.
 *
 * With snr_db set, each observed channel gets sigma^2 = P / 10^(snr/10)
 * where P is the channel's mean-square value. Otherwise `sigma` holds one
 * standard deviation per state channel (hidden channels ignored).
 * An infinite snr_db means no noise.
 */
struct NoiseSpec {
  std::optional<double> snr_db;
  std::vector<double> sigma;
  std::uint64_t seed = 0;
  /// Rescale each realised noise vector so its mean square equals sigma^2
  /// exactly, which makes the empirical SNR equal the requested one.
  bool exact_power = true;

  void validate(std::size_t state_dim) const;
};

/// Noisy copy of `clean`. Inputs and hidden channels are untouched.
Trajectory corrupt(const Trajectory &clean, const NoiseSpec &spec);

/// 10 log10(P_signal / P_noise) with noise = noisy - clean, on one channel.
double empirical_snr_db(const Trajectory &clean, const Trajectory &noisy,
                        std::size_t channel);

/// Keeps samples 0, k, 2k, ...
Trajectory downsample(const Trajectory &traj, std::size_t keep_every);

/// Replaces the observability mask. Values of hidden channels are kept.
Trajectory mask_hidden(const Trajectory &traj, const std::vector<bool> &observable);

/// Column names of the OhioT1D-shaped CSV.
struct OhioSchema {
  std::string timestamp = "timestamp";
  std::string glucose = "glucose";
  std::string basal_insulin = "basal_insulin";
  std::string bolus_insulin = "bolus_insulin";
  std::string carbs = "carbs";
  double nominal_spacing_s = 300.0;
  /// Gaps strictly larger than gap_factor * nominal spacing split segments.
  double gap_factor = 2.0;
};

/**
 * Parses `timestamp,glucose,basal_insulin,bolus_insulin,carbs` rows.
 *
 * Each segment has one observed state ("glucose") and two inputs:
 * "insulin" = basal + bolus and "carbs". Missing insulin or carbs count as
 * zero; a row with missing glucose is dropped, which may open a gap.
 * Times are seconds as written (ISO-8601 stamps become Unix seconds).
 * Segments with a single sample are discarded.
 */
std::vector<Trajectory> load_ohio_format(std::istream &in,
                                         const OhioSchema &schema = {});
std::vector<Trajectory> load_ohio_format(const std::string &path,
                                         const OhioSchema &schema = {});

/// Writes a single segment back in the OhioT1D-shaped layout (basal column
/// carries the whole insulin channel, bolus written as 0).
void write_ohio_format(std::ostream &out, const Trajectory &segment);

/// Parses integer seconds or `YYYY-MM-DD[T ]HH:MM:SS[Z]`.
double parse_timestamp(const std::string &field, std::size_t line);

} // namespace dtwin

#endif // DTWIN_SIGNAL_HPP
