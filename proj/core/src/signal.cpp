// SPDX-License-Identifier: Apache-2.0
#include "dtwin/signal.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>

#include "dtwin/error.hpp"
#include "dtwin/rng.hpp"
#include "dtwin/textio.hpp"

namespace dtwin {

void NoiseSpec::validate(std::size_t state_dim) const {
  if (snr_db && !sigma.empty())
    throw ArgumentError("noise spec sets both snr_db and sigma");
  if (snr_db && std::isnan(*snr_db))
    throw ArgumentError("snr_db must not be NaN");
  if (snr_db && std::isinf(*snr_db) && *snr_db < 0)
    throw ArgumentError("snr_db of -inf is not a valid noise level");
  if (!sigma.empty()) {
    if (sigma.size() != state_dim)
      throw StructuralError("noise sigma needs one entry per state channel");
    for (double s : sigma)
      if (!(s >= 0.0) || !std::isfinite(s))
        throw ArgumentError("noise sigma must be finite and non-negative");
  }
}

Trajectory corrupt(const Trajectory &clean, const NoiseSpec &spec) {
  clean.validate();
  spec.validate(clean.state_dim());
  Trajectory noisy = clean;
  if (spec.snr_db && std::isinf(*spec.snr_db))
    return noisy;

  Rng rng(spec.seed);
  const auto big_n = clean.states.rows();
  for (std::size_t j = 0; j < clean.state_dim(); ++j) {
    if (!clean.mask[j])
      continue;
    const auto col = static_cast<Eigen::Index>(j);
    double sigma = 0.0;
    if (spec.snr_db) {
      const double power = clean.states.col(col).squaredNorm() / static_cast<double>(big_n);
      sigma = std::sqrt(power / std::pow(10.0, *spec.snr_db / 10.0));
    } else if (!spec.sigma.empty()) {
      sigma = spec.sigma[j];
    }
    if (sigma == 0.0)
      continue;
    Vector noise(big_n);
    for (Eigen::Index k = 0; k < big_n; ++k)
      noise(k) = rng.normal();
    if (spec.exact_power) {
      const double ms = noise.squaredNorm() / static_cast<double>(big_n);
      noise *= sigma / std::sqrt(ms);
    } else {
      noise *= sigma;
    }
    noisy.states.col(col) += noise;
  }
  return noisy;
}

double empirical_snr_db(const Trajectory &clean, const Trajectory &noisy,
                        std::size_t channel) {
  const auto col = static_cast<Eigen::Index>(channel);
  if (clean.states.rows() != noisy.states.rows() || col >= clean.states.cols())
    throw StructuralError("SNR comparison between mismatched trajectories");
  const double signal = clean.states.col(col).squaredNorm();
  const double noise = (noisy.states.col(col) - clean.states.col(col)).squaredNorm();
  if (noise == 0.0)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

Trajectory downsample(const Trajectory &traj, std::size_t keep_every) {
  traj.validate();
  if (keep_every == 0)
    throw ArgumentError("keep_every must be at least 1");
  const std::size_t kept = (traj.samples() - 1) / keep_every + 1;
  if (kept < 2)
    throw ArgumentError("downsampling by " + std::to_string(keep_every) +
                        " leaves fewer than 2 samples");
  Trajectory out;
  out.mask = traj.mask;
  out.state_names = traj.state_names;
  out.input_names = traj.input_names;
  out.time_unit = traj.time_unit;
  const auto rows = static_cast<Eigen::Index>(kept);
  out.times.resize(rows);
  out.states.resize(rows, traj.states.cols());
  out.inputs.resize(rows, traj.inputs.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto src = r * static_cast<Eigen::Index>(keep_every);
    out.times(r) = traj.times(src);
    out.states.row(r) = traj.states.row(src);
    out.inputs.row(r) = traj.inputs.row(src);
  }
  return out;
}

Trajectory mask_hidden(const Trajectory &traj, const std::vector<bool> &observable) {
  if (observable.size() != traj.state_dim())
    throw StructuralError("observability vector length " +
                          std::to_string(observable.size()) + " != state dimension " +
                          std::to_string(traj.state_dim()));
  bool any = false;
  for (bool b : observable)
    any = any || b;
  if (!any)
    throw ArgumentError("at least one channel must be observable");
  Trajectory out = traj;
  out.mask = observable;
  return out;
}

// ---------------------------------------------------------------------------
// OhioT1D-shaped CSV
// ---------------------------------------------------------------------------

double parse_timestamp(const std::string &field, std::size_t line) {
  const std::string text = trim(field);
  if (text.empty())
    throw ParseError("missing timestamp", line);
  if (text.find('-') == std::string::npos || text.find(':') == std::string::npos) {
    const double value = parse_double(text, line);
    if (value != std::floor(value))
      throw ParseError("timestamp seconds must be an integer", line);
    return value;
  }
  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  char sep = 0;
  char tail[8] = {0};
  const int got = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%7s", &year,
                              &month, &day, &sep, &hour, &minute, &second, tail);
  if (got < 7 || (sep != 'T' && sep != ' ') ||
      (got == 8 && std::string(tail) != "Z"))
    throw ParseError("cannot parse timestamp '" + text + "'", line);
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year},
                           std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 60)
    throw ParseError("invalid calendar timestamp '" + text + "'", line);
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + hour * 3600.0 + minute * 60.0 + second;
}

namespace {

struct OhioRow {
  double t;
  double glucose;
  double insulin;
  double carbs;
};

Trajectory make_segment(const std::vector<OhioRow> &rows) {
  Trajectory seg;
  const auto big_n = static_cast<Eigen::Index>(rows.size());
  seg.times.resize(big_n);
  seg.states.resize(big_n, 1);
  seg.inputs.resize(big_n, 2);
  for (Eigen::Index k = 0; k < big_n; ++k) {
    const auto &r = rows[static_cast<std::size_t>(k)];
    seg.times(k) = r.t;
    seg.states(k, 0) = r.glucose;
    seg.inputs(k, 0) = r.insulin;
    seg.inputs(k, 1) = r.carbs;
  }
  seg.mask = {true};
  seg.state_names = {"glucose"};
  seg.input_names = {"insulin", "carbs"};
  seg.time_unit = TimeUnit::Seconds;
  return seg;
}

} // namespace

std::vector<Trajectory> load_ohio_format(std::istream &in, const OhioSchema &schema) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw ParseError("empty OhioT1D file", 1);
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c)
    column[trim(header[c])] = c;
  auto require = [&](const std::string &name) {
    const auto it = column.find(name);
    if (it == column.end())
      throw ParseError("OhioT1D header lacks column '" + name + "'", 1);
    return it->second;
  };
  const auto c_time = require(schema.timestamp);
  const auto c_glucose = require(schema.glucose);
  const auto c_basal = require(schema.basal_insulin);
  const auto c_bolus = require(schema.bolus_insulin);
  const auto c_carbs = require(schema.carbs);

  std::vector<OhioRow> rows;
  std::size_t line_no = 1;
  std::optional<double> last_time;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                         std::to_string(fields.size()),
                       line_no);
    const double t = parse_timestamp(fields[c_time], line_no);
    if (last_time && !(t > *last_time))
      throw ParseError("timestamps are not strictly increasing", line_no);
    last_time = t;
    const auto glucose = parse_optional_double(fields[c_glucose], line_no);
    const double basal = parse_optional_double(fields[c_basal], line_no).value_or(0.0);
    const double bolus = parse_optional_double(fields[c_bolus], line_no).value_or(0.0);
    const double carbs = parse_optional_double(fields[c_carbs], line_no).value_or(0.0);
    if (!glucose)
      continue;
    rows.push_back({t, *glucose, basal + bolus, carbs});
  }
  if (rows.empty())
    throw ParseError("OhioT1D file has no glucose samples", line_no);

  const double max_gap = schema.gap_factor * schema.nominal_spacing_s;
  std::vector<Trajectory> segments;
  std::vector<OhioRow> current;
  for (const auto &r : rows) {
    if (!current.empty() && r.t - current.back().t > max_gap) {
      if (current.size() >= 2)
        segments.push_back(make_segment(current));
      current.clear();
    }
    current.push_back(r);
  }
  if (current.size() >= 2)
    segments.push_back(make_segment(current));
  if (segments.empty())
    throw ParseError("OhioT1D file has no segment with at least 2 samples", line_no);
  return segments;
}

std::vector<Trajectory> load_ohio_format(const std::string &path,
                                         const OhioSchema &schema) {
  std::ifstream in(path);
  if (!in)
    throw ArgumentError("cannot open '" + path + "'");
  return load_ohio_format(in, schema);
}

void write_ohio_format(std::ostream &out, const Trajectory &segment) {
  segment.validate();
  if (segment.state_dim() != 1 || segment.input_dim() != 2)
    throw StructuralError("OhioT1D layout needs 1 state and 2 inputs");
  out << "timestamp,glucose,basal_insulin,bolus_insulin,carbs\n";
  for (std::size_t k = 0; k < segment.samples(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out << format_double(segment.times(r)) << ',' << format_double(segment.states(r, 0))
        << ',' << format_double(segment.inputs(r, 0)) << ",0,"
        << format_double(segment.inputs(r, 1)) << '\n';
  }
}

} // namespace dtwin
