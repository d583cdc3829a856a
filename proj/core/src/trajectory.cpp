// SPDX-License-Identifier: Apache-2.0
#include "dtwin/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dtwin/error.hpp"
#include "dtwin/textio.hpp"

namespace dtwin {

std::string_view to_string(TimeUnit unit) {
  return unit == TimeUnit::Minutes ? "minutes" : "seconds";
}

TimeUnit time_unit_from_string(std::string_view text) {
  if (text == "seconds" || text == "s")
    return TimeUnit::Seconds;
  if (text == "minutes" || text == "min")
    return TimeUnit::Minutes;
  throw ArgumentError("unknown time unit '" + std::string(text) + "'");
}

std::size_t Trajectory::observed_count() const {
  std::size_t count = 0;
  for (bool m : mask)
    count += m ? 1 : 0;
  return count;
}

void Trajectory::validate() const {
  const auto n_samples = times.size();
  if (n_samples < 2)
    throw ArgumentError("trajectory needs at least 2 samples, got " +
                        std::to_string(n_samples));
  if (states.rows() != n_samples || inputs.rows() != n_samples)
    throw StructuralError("trajectory row counts disagree with times");
  if (mask.size() != static_cast<std::size_t>(states.cols()))
    throw StructuralError("mask length " + std::to_string(mask.size()) +
                          " != state dimension " + std::to_string(states.cols()));
  if (!state_names.empty() && state_names.size() != mask.size())
    throw StructuralError("state name count disagrees with state dimension");
  if (!input_names.empty() &&
      input_names.size() != static_cast<std::size_t>(inputs.cols()))
    throw StructuralError("input name count disagrees with input dimension");
  if (observed_count() == 0)
    throw ArgumentError("trajectory mask has no observed channel");
  for (Eigen::Index k = 1; k < n_samples; ++k)
    if (!(times(k) > times(k - 1)))
      throw ArgumentError("trajectory times not strictly increasing at sample " +
                          std::to_string(k));
}

namespace {

std::string state_label(const Trajectory &traj, std::size_t j) {
  return j < traj.state_names.size() ? traj.state_names[j]
                                     : "x" + std::to_string(j);
}

std::string input_label(const Trajectory &traj, std::size_t j) {
  return j < traj.input_names.size() ? traj.input_names[j]
                                     : "u" + std::to_string(j);
}

} // namespace

void write_trajectory_csv(std::ostream &out, const Trajectory &traj) {
  traj.validate();
  const std::size_t n = traj.state_dim();
  const std::size_t m = traj.input_dim();
  out << "t";
  for (std::size_t j = 0; j < n; ++j)
    out << ',' << state_label(traj, j);
  for (std::size_t j = 0; j < m; ++j)
    out << ',' << input_label(traj, j);
  for (std::size_t j = 0; j < n; ++j)
    out << ",mask_" << state_label(traj, j);
  out << '\n';
  for (std::size_t k = 0; k < traj.samples(); ++k) {
    out << format_double(traj.times(k));
    for (std::size_t j = 0; j < n; ++j)
      out << ',' << format_double(traj.states(k, j));
    for (std::size_t j = 0; j < m; ++j)
      out << ',' << format_double(traj.inputs(k, j));
    for (std::size_t j = 0; j < n; ++j)
      out << ',' << (traj.mask[j] ? '1' : '0');
    out << '\n';
  }
}

void write_trajectory_csv(const std::string &path, const Trajectory &traj) {
  std::ofstream out(path);
  if (!out)
    throw ArgumentError("cannot open '" + path + "' for writing");
  write_trajectory_csv(out, traj);
}

Trajectory read_trajectory_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty trajectory file", 1);
  const auto header = split_csv_line(line);
  if (header.empty() || trim(header[0]) != "t")
    throw ParseError("trajectory header must start with 't'", 1);

  std::size_t n = 0;
  for (const auto &name : header)
    if (trim(name).rfind("mask_", 0) == 0)
      ++n;
  if (n == 0)
    throw ParseError("trajectory header has no mask_ columns", 1);
  if (header.size() < 1 + 2 * n)
    throw ParseError("trajectory header too short for " + std::to_string(n) +
                         " states",
                     1);
  const std::size_t m = header.size() - 1 - 2 * n;

  Trajectory traj;
  for (std::size_t j = 0; j < n; ++j) {
    traj.state_names.push_back(trim(header[1 + j]));
    if (trim(header[1 + n + m + j]) != "mask_" + traj.state_names.back())
      throw ParseError("mask column " + std::to_string(j) +
                           " does not match state '" + traj.state_names.back() + "'",
                       1);
  }
  for (std::size_t j = 0; j < m; ++j)
    traj.input_names.push_back(trim(header[1 + n + j]));

  std::vector<std::vector<double>> rows;
  std::vector<bool> mask;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) +
                           " fields, got " + std::to_string(fields.size()),
                       line_no);
    std::vector<double> row(1 + n + m);
    for (std::size_t c = 0; c < row.size(); ++c)
      row[c] = parse_double(fields[c], line_no);
    std::vector<bool> row_mask(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto v = trim(fields[1 + n + m + j]);
      if (v != "0" && v != "1")
        throw ParseError("mask entries must be 0 or 1", line_no);
      row_mask[j] = v == "1";
    }
    if (mask.empty())
      mask = row_mask;
    else if (mask != row_mask)
      throw ParseError("mask changes between rows", line_no);
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2)
    throw ParseError("trajectory needs at least 2 data rows", line_no);

  const auto big_n = static_cast<Eigen::Index>(rows.size());
  traj.times.resize(big_n);
  traj.states.resize(big_n, static_cast<Eigen::Index>(n));
  traj.inputs.resize(big_n, static_cast<Eigen::Index>(m));
  for (Eigen::Index k = 0; k < big_n; ++k) {
    const auto &row = rows[static_cast<std::size_t>(k)];
    traj.times(k) = row[0];
    for (std::size_t j = 0; j < n; ++j)
      traj.states(k, static_cast<Eigen::Index>(j)) = row[1 + j];
    for (std::size_t j = 0; j < m; ++j)
      traj.inputs(k, static_cast<Eigen::Index>(j)) = row[1 + n + j];
  }
  traj.mask = mask;
  traj.validate();
  return traj;
}

Trajectory read_trajectory_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ArgumentError("cannot open '" + path + "'");
  return read_trajectory_csv(in);
}

} // namespace dtwin
