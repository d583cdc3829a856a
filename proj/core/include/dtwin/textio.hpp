// SPDX-License-Identifier: Apache-2.0
// Small CSV helpers shared by the file readers.
#ifndef DTWIN_TEXTIO_HPP
#define DTWIN_TEXTIO_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dtwin {

std::vector<std::string> split_csv_line(std::string_view line);
std::string trim(std::string_view text);

/// Throws ParseError carrying `line` when `field` is not a finite number.
double parse_double(std::string_view field, std::size_t line);
/// Empty field -> nullopt.
std::optional<double> parse_optional_double(std::string_view field,
                                            std::size_t line);

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

} // namespace dtwin

#endif // DTWIN_TEXTIO_HPP
