// SPDX-License-Identifier: Apache-2.0
/**
 * @file   bench.hpp
 * @brief  Run measurement, roofline, perf-per-watt ratios and Pareto fronts
 *         over platform samples.
 */
#ifndef DTWIN_BENCH_HPP
#define DTWIN_BENCH_HPP

#include <cstddef>
#include <exception>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dtwin/error.hpp"

namespace dtwin::bench {

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

struct Measurement {
  double runtime_s = 0.0;
  /// Highest resident set observed while the closure ran.
  std::size_t peak_memory_bytes = 0;
  /// Resident set just before the closure started.
  std::size_t baseline_memory_bytes = 0;
  std::size_t samples_taken = 0;

  std::size_t peak_above_baseline() const {
    return peak_memory_bytes > baseline_memory_bytes
             ? peak_memory_bytes - baseline_memory_bytes
             : 0;
  }
};

/// Thrown when the measured closure fails; carries the timing so far and
/// the original exception.
class MeasurementError : public Error {
public:
  MeasurementError(const std::string &what, Measurement partial, std::exception_ptr cause)
    : Error(what), partial_(partial), cause_(std::move(cause)) {}
  const Measurement &partial() const noexcept { return partial_; }
  std::exception_ptr cause() const noexcept { return cause_; }

private:
  Measurement partial_;
  std::exception_ptr cause_;
};

struct MeasureOptions {
  double sample_hz = 100.0;
};

/**
 * Times `run` on a monotonic clock and samples the process resident set on
 * a background thread. Measured runs are serialised process-wide, since
 * overlapping runs would share one memory peak. Peak RSS approximates the
 * DRAM footprint of the run.
 */
Measurement measure_recovery(const std::function<void()> &run,
                             const MeasureOptions &options = {});

// ---------------------------------------------------------------------------
// Platform samples
// ---------------------------------------------------------------------------

struct PlatformSample {
  std::string label;
  double runtime_s = 0.0;
  std::optional<double> avg_power_w;
  double dram_mb = 0.0;
  double error = 0.0;
  std::optional<double> freq_mhz;
  std::optional<double> flops;
  std::optional<double> bytes_moved;

  void validate() const;
};

/// Header: label,runtime_s,avg_power_w,dram_mb,error,freq_mhz,flops,bytes_moved
/// Empty fields are absent. Lines starting with '#' are comments.
std::vector<PlatformSample> read_samples_csv(std::istream &in);
std::vector<PlatformSample> read_samples_csv(const std::string &path);
void write_samples_csv(std::ostream &out, const std::vector<PlatformSample> &samples);

std::string samples_to_json(const std::vector<PlatformSample> &samples);
std::vector<PlatformSample> samples_from_json(const std::string &text);

const PlatformSample &find_sample(const std::vector<PlatformSample> &samples,
                                  const std::string &label);

// ---------------------------------------------------------------------------
// Ratios
// ---------------------------------------------------------------------------

/// Perf/watt convention: runtime seconds per watt of average power.
inline constexpr const char *kPerfPerWattConvention = "runtime_s / avg_power_w (s/W)";

/// nullopt when power is absent.
std::optional<double> perf_per_watt(const PlatformSample &sample);

struct RatioRow {
  std::string label;
  double speedup;        ///< baseline runtime / runtime
  double runtime_ratio;  ///< runtime / baseline runtime
  double dram_reduction; ///< baseline dram / dram
  double dram_ratio;     ///< dram / baseline dram
  /// perf_per_watt(sample) / perf_per_watt(baseline), when both have power.
  std::optional<double> perf_per_watt_ratio;
};

std::vector<RatioRow> ratio_report(const std::vector<PlatformSample> &samples,
                                   const std::string &baseline_label);

std::string ratio_report_to_json(const std::vector<RatioRow> &rows,
                                 const std::string &baseline_label);

// ---------------------------------------------------------------------------
// Roofline
// ---------------------------------------------------------------------------

struct RooflineSpec {
  std::string label;
  double peak_gflops = 1.0;
  double bandwidth_gbs = 1.0;

  void validate() const;
  double ridge_point() const { return peak_gflops / bandwidth_gbs; }
};

/// min(peak, bandwidth * oi).
double roofline_attainable(const RooflineSpec &spec, double oi);

/// `points` log-spaced intensities from oi_min to oi_max inclusive.
std::vector<double> log_space(double lo, double hi, std::size_t points);

/// oi,<label>... with one column per spec.
void write_roofline_csv(std::ostream &out, const std::vector<RooflineSpec> &specs,
                        const std::vector<double> &intensities);

std::vector<RooflineSpec> roofline_specs_from_json(const std::string &text);

// ---------------------------------------------------------------------------
// Pareto
// ---------------------------------------------------------------------------

enum class Field { Runtime, Power, Dram, Error, Freq, Flops, BytesMoved };
enum class Direction { Minimize, Maximize };

std::string to_string(Field field);
Field field_from_string(const std::string &text);

struct Objective {
  Field field;
  Direction direction = Direction::Minimize;
};

/// Throws ArgumentError naming sample and field when the value is absent.
double field_value(const PlatformSample &sample, Field field);

/// a dominates b: no worse on every objective and better on one.
bool dominates(const PlatformSample &a, const PlatformSample &b,
               const std::vector<Objective> &objectives);

/// Indices of the non-dominated samples in original order. Samples that tie
/// on every objective are all kept.
std::vector<std::size_t> pareto_front(const std::vector<PlatformSample> &samples,
                                      const std::vector<Objective> &objectives);

/// m[i][j] is true when sample i dominates sample j.
std::vector<std::vector<bool>> dominance_matrix(const std::vector<PlatformSample> &samples,
                                                const std::vector<Objective> &objectives);

std::string pareto_to_json(const std::vector<PlatformSample> &samples,
                           const std::vector<Objective> &objectives);

// ---------------------------------------------------------------------------
// Work estimate
// ---------------------------------------------------------------------------

struct WorkEstimate {
  double flops = 0.0;
  double bytes = 0.0;
  double intensity() const { return bytes > 0.0 ? flops / bytes : 0.0; }
};

/**
 * Rough FLOP and byte count of one training epoch for a flow with hidden
 * width H, state n, input m, over N samples (forward plus backward, about
 * three times the forward cost). Bytes count parameter and activation
 * traffic in doubles.
 */
WorkEstimate estimate_epoch_work(std::size_t hidden, std::size_t state, std::size_t input,
                                 std::size_t samples);

} // namespace dtwin::bench

#endif // DTWIN_BENCH_HPP
