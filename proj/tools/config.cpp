// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dtwin::cli {

Section::Section(const json &node, std::string path) : node_(&node), path_(std::move(path)) {
  if (!node.is_object())
    throw ConfigError("'" + path_ + "' must be a JSON object");
}

std::string Section::where(const std::string &key) const { return path_ + "." + key; }

bool Section::has(const std::string &key) const {
  if (!node_->contains(key))
    return false;
  used_.insert(key);
  return true;
}

const json &Section::at(const std::string &key) const {
  if (!node_->contains(key))
    throw ConfigError("missing required field '" + where(key) + "'");
  used_.insert(key);
  return node_->at(key);
}

const json &Section::raw(const std::string &key) const { return at(key); }

double Section::number(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_number())
    throw ConfigError("'" + where(key) + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d))
    throw ConfigError("'" + where(key) + "' must be finite");
  return d;
}

double Section::number(const std::string &key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

std::optional<double> Section::optional_number(const std::string &key) const {
  if (!has(key) || node_->at(key).is_null())
    return std::nullopt;
  return number(key);
}

std::uint64_t Section::count(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError("'" + where(key) + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::uint64_t Section::count(const std::string &key, std::uint64_t fallback) const {
  return has(key) ? count(key) : fallback;
}

bool Section::flag(const std::string &key, bool fallback) const {
  if (!has(key))
    return fallback;
  const auto &v = at(key);
  if (!v.is_boolean())
    throw ConfigError("'" + where(key) + "' must be true or false");
  return v.get<bool>();
}

std::string Section::text(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_string())
    throw ConfigError("'" + where(key) + "' must be a string");
  return v.get<std::string>();
}

std::string Section::text(const std::string &key, const std::string &fallback) const {
  return has(key) ? text(key) : fallback;
}

std::vector<double> Section::numbers(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_array())
    throw ConfigError("'" + where(key) + "' must be an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw ConfigError("'" + where(key) + "[" + std::to_string(i) + "]' must be a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::vector<bool> Section::flags(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_array())
    throw ConfigError("'" + where(key) + "' must be an array of booleans");
  std::vector<bool> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_boolean())
      throw ConfigError("'" + where(key) + "[" + std::to_string(i) + "]' must be a boolean");
    out.push_back(v[i].get<bool>());
  }
  return out;
}

std::vector<std::string> Section::texts(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_array())
    throw ConfigError("'" + where(key) + "' must be an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string())
      throw ConfigError("'" + where(key) + "[" + std::to_string(i) + "]' must be a string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

Section Section::child(const std::string &key) const { return Section(at(key), where(key)); }

std::vector<Section> Section::children(const std::string &key) const {
  const auto &v = at(key);
  if (!v.is_array())
    throw ConfigError("'" + where(key) + "' must be an array");
  std::vector<Section> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.emplace_back(v[i], where(key) + "[" + std::to_string(i) + "]");
  return out;
}

void Section::finish() const {
  for (const auto &[key, _] : node_->items())
    if (!used_.count(key))
      throw ConfigError("unknown field '" + where(key) + "'");
}

json parse_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return json::parse(buffer.str());
  } catch (const json::parse_error &e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

} // namespace dtwin::cli
