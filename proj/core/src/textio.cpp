// SPDX-License-Identifier: Apache-2.0
#include "dtwin/textio.hpp"

#include <charconv>
#include <cmath>

#include "dtwin/error.hpp"

namespace dtwin {

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r')
    line.remove_suffix(1);
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos)
    return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

double parse_double(std::string_view field, std::size_t line) {
  const auto text = trim(field);
  if (text.empty())
    throw ParseError("missing numeric field", line);
  double value = 0.0;
  const char *begin = text.data();
  const char *end = text.data() + text.size();
  if (*begin == '+')
    ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError("cannot parse '" + text + "' as a number", line);
  if (!std::isfinite(value))
    throw ParseError("non-finite value '" + text + "'", line);
  return value;
}

std::optional<double> parse_optional_double(std::string_view field,
                                            std::size_t line) {
  if (trim(field).empty())
    return std::nullopt;
  return parse_double(field, line);
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc())
    return std::to_string(value);
  return std::string(buf, ptr);
}

} // namespace dtwin
