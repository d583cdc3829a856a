// SPDX-License-Identifier: Apache-2.0
// Strict JSON config access: every read records its key, and finish()
// rejects whatever was left unread. Errors name the full path of the field.
#ifndef DTWIN_TOOLS_CONFIG_HPP
#define DTWIN_TOOLS_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtwin/error.hpp"

namespace dtwin::cli {

using nlohmann::json;

class ConfigError : public ArgumentError {
public:
  using ArgumentError::ArgumentError;
};

class Section {
public:
  Section(const json &node, std::string path);

  const std::string &path() const { return path_; }
  bool has(const std::string &key) const;

  double number(const std::string &key) const;
  double number(const std::string &key, double fallback) const;
  std::optional<double> optional_number(const std::string &key) const;
  std::uint64_t count(const std::string &key) const;
  std::uint64_t count(const std::string &key, std::uint64_t fallback) const;
  bool flag(const std::string &key, bool fallback) const;
  std::string text(const std::string &key) const;
  std::string text(const std::string &key, const std::string &fallback) const;
  std::vector<double> numbers(const std::string &key) const;
  std::vector<bool> flags(const std::string &key) const;
  std::vector<std::string> texts(const std::string &key) const;

  Section child(const std::string &key) const;
  /// Elements of an array of objects.
  std::vector<Section> children(const std::string &key) const;
  const json &raw(const std::string &key) const;

  /// Throws ConfigError naming the first key nobody read.
  void finish() const;

private:
  const json &at(const std::string &key) const;
  std::string where(const std::string &key) const;

  const json *node_;
  std::string path_;
  mutable std::set<std::string> used_;
};

json parse_json_file(const std::string &path);

} // namespace dtwin::cli

#endif // DTWIN_TOOLS_CONFIG_HPP
