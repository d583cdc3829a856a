// SPDX-License-Identifier: Apache-2.0
#include "dtwin/hlscost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "dtwin/error.hpp"

namespace dtwin::hls {

using nlohmann::json;

std::string to_string(DepKind kind) { return kind == DepKind::RAW ? "RAW" : "WAR"; }

DepKind dep_kind_from_string(const std::string &text) {
  if (text == "RAW")
    return DepKind::RAW;
  if (text == "WAR")
    return DepKind::WAR;
  throw ParseError("dependency kind must be RAW or WAR, got '" + text + "'");
}

void LoopSpec::validate() const {
  if (trip_count < 1)
    throw ArgumentError("trip_count must be at least 1");
  if (depth < 1)
    throw ArgumentError("depth must be at least 1");
  for (const auto &d : deps)
    if (d.latency < 1 || d.distance < 1)
      throw ArgumentError("dependency latency and distance must be at least 1");
}

void PartitionSpec::validate() const {
  if (default_ports < 1)
    throw ArgumentError("default_ports must be at least 1");
  for (const auto &[id, p] : arrays)
    if (p.ports_per_bank < 1)
      throw ArgumentError("array '" + id + "' needs at least one port per bank");
}

ArrayPartition PartitionSpec::lookup(const std::string &array_id) const {
  const auto it = arrays.find(array_id);
  if (it != arrays.end())
    return it->second;
  return {Partitioning::None, default_ports};
}

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

bool active(const LoopSpec &loop, const Dependency &d) {
  return d.distance < loop.trip_count;
}

/// Total per-iteration accesses per array id.
std::map<std::string, std::uint64_t> accesses_by_array(const LoopSpec &loop) {
  std::map<std::string, std::uint64_t> total;
  for (const auto &a : loop.array_accesses)
    total[a.array_id] += a.reads_per_iter + a.writes_per_iter;
  return total;
}

} // namespace

std::uint64_t recurrence_bound(const LoopSpec &loop) {
  loop.validate();
  std::uint64_t bound = 1;
  for (const auto &d : loop.deps)
    if (active(loop, d))
      bound = std::max(bound, ceil_div(d.latency, d.distance));
  return bound;
}

std::uint64_t resource_bound(const LoopSpec &loop, const PartitionSpec &partition) {
  loop.validate();
  partition.validate();
  std::uint64_t bound = 1;
  for (const auto &[id, count] : accesses_by_array(loop)) {
    const auto p = partition.lookup(id);
    if (p.partitioned == Partitioning::Complete)
      continue;
    bound = std::max(bound, ceil_div(count, p.ports_per_bank));
  }
  return bound;
}

std::uint64_t min_feasible_ii(const LoopSpec &loop, const PartitionSpec &partition) {
  return std::max(recurrence_bound(loop), resource_bound(loop, partition));
}

std::vector<Dependency> hazard_check(const LoopSpec &loop, std::uint64_t ii) {
  loop.validate();
  if (ii < 1)
    throw ArgumentError("initiation interval must be at least 1");
  std::vector<Dependency> out;
  for (const auto &d : loop.deps)
    if (active(loop, d) && d.latency > ii * d.distance)
      out.push_back(d);
  return out;
}

HazardReport hazard_check(const LoopSpec &loop, std::uint64_t ii,
                          const PartitionSpec &partition) {
  partition.validate();
  HazardReport report;
  report.dependencies = hazard_check(loop, ii);
  for (const auto &[id, count] : accesses_by_array(loop)) {
    const auto p = partition.lookup(id);
    if (p.partitioned == Partitioning::Complete)
      continue;
    if (count > ii * p.ports_per_bank)
      report.ports.push_back({id, count, p.ports_per_bank});
  }
  return report;
}

std::uint64_t loop_latency(const LoopSpec &loop, std::uint64_t ii,
                           const PartitionSpec &partition) {
  const auto min_ii = min_feasible_ii(loop, partition);
  if (ii < min_ii)
    throw ArgumentError("II=" + std::to_string(ii) + " is below the feasible minimum " +
                        std::to_string(min_ii));
  return loop.depth + (loop.trip_count - 1) * ii;
}

double throughput_estimate(const LoopSpec &loop, std::uint64_t ii, double clock_mhz) {
  loop.validate();
  if (!(clock_mhz > 0.0) || !std::isfinite(clock_mhz))
    throw ArgumentError("clock_mhz must be positive");
  if (ii < 1)
    throw ArgumentError("initiation interval must be at least 1");
  return clock_mhz * 1e6 / static_cast<double>(ii);
}

std::vector<FeasibilityRow> feasibility_table(const LoopSpec &loop,
                                              const PartitionSpec &partition,
                                              double clock_mhz) {
  const auto last = std::max<std::uint64_t>(3, min_feasible_ii(loop, partition));
  std::vector<FeasibilityRow> rows;
  for (std::uint64_t ii = 1; ii <= last; ++ii) {
    FeasibilityRow row{ii, false, hazard_check(loop, ii, partition), 0, 0.0};
    row.feasible = row.hazards.feasible();
    if (row.feasible)
      row.latency_cycles = loop.depth + (loop.trip_count - 1) * ii;
    row.throughput = throughput_estimate(loop, ii, clock_mhz);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const json &obj, std::initializer_list<const char *> allowed,
                    const std::string &where) {
  for (const auto &[key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char *a) { return key == a; }) == allowed.end())
      throw ParseError("unknown key '" + where + "." + key + "'");
  }
}

std::uint64_t get_count(const json &obj, const char *key, const std::string &where,
                        std::optional<std::uint64_t> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback)
      return *fallback;
    throw ParseError("missing key '" + where + "." + key + "'");
  }
  const auto &v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ParseError("'" + where + "." + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

LoopSpec parse_loop(const json &j) {
  if (!j.is_object())
    throw ParseError("'loop' must be an object");
  reject_unknown(j, {"name", "trip_count", "depth", "deps", "array_accesses"}, "loop");
  LoopSpec loop;
  if (j.contains("name"))
    loop.name = j.at("name").get<std::string>();
  loop.trip_count = get_count(j, "trip_count", "loop");
  loop.depth = get_count(j, "depth", "loop");
  if (j.contains("deps")) {
    std::size_t i = 0;
    for (const auto &d : j.at("deps")) {
      const std::string where = "loop.deps[" + std::to_string(i++) + "]";
      if (!d.is_object())
        throw ParseError("'" + where + "' must be an object");
      reject_unknown(d, {"kind", "latency", "distance"}, where);
      Dependency dep;
      dep.kind = dep_kind_from_string(d.value("kind", std::string("RAW")));
      dep.latency = get_count(d, "latency", where);
      dep.distance = get_count(d, "distance", where, 1);
      loop.deps.push_back(dep);
    }
  }
  if (j.contains("array_accesses")) {
    std::size_t i = 0;
    for (const auto &a : j.at("array_accesses")) {
      const std::string where = "loop.array_accesses[" + std::to_string(i++) + "]";
      if (!a.is_object())
        throw ParseError("'" + where + "' must be an object");
      reject_unknown(a, {"array_id", "reads_per_iter", "writes_per_iter"}, where);
      if (!a.contains("array_id"))
        throw ParseError("missing key '" + where + ".array_id'");
      loop.array_accesses.push_back({a.at("array_id").get<std::string>(),
                                     get_count(a, "reads_per_iter", where, 0),
                                     get_count(a, "writes_per_iter", where, 0)});
    }
  }
  try {
    loop.validate();
  } catch (const ArgumentError &e) {
    throw ParseError(e.what());
  }
  return loop;
}

PartitionSpec parse_partition(const json &j) {
  if (!j.is_object())
    throw ParseError("'partition' must be an object");
  reject_unknown(j, {"default_ports", "arrays"}, "partition");
  PartitionSpec p;
  p.default_ports = get_count(j, "default_ports", "partition", 2);
  if (j.contains("arrays")) {
    for (const auto &[id, a] : j.at("arrays").items()) {
      const std::string where = "partition.arrays." + id;
      reject_unknown(a, {"partitioned", "ports_per_bank"}, where);
      ArrayPartition ap;
      const auto mode = a.value("partitioned", std::string("none"));
      if (mode == "complete")
        ap.partitioned = Partitioning::Complete;
      else if (mode != "none")
        throw ParseError("'" + where + ".partitioned' must be complete or none");
      ap.ports_per_bank = get_count(a, "ports_per_bank", where, p.default_ports);
      p.arrays[id] = ap;
    }
  }
  try {
    p.validate();
  } catch (const ArgumentError &e) {
    throw ParseError(e.what());
  }
  return p;
}

} // namespace

CostDocument parse_cost_document(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ParseError(std::string("malformed cost document: ") + e.what());
  }
  if (!j.is_object())
    throw ParseError("cost document must be a JSON object");
  reject_unknown(j, {"format_version", "loop", "partition", "clock_mhz"}, "$");
  if (!j.contains("loop"))
    throw ParseError("missing key '$.loop'");
  CostDocument doc;
  try {
    doc.loop = parse_loop(j.at("loop"));
    if (j.contains("partition"))
      doc.partition = parse_partition(j.at("partition"));
    if (j.contains("clock_mhz"))
      doc.clock_mhz = j.at("clock_mhz").get<double>();
  } catch (const json::exception &e) {
    throw ParseError(std::string("cost document type error: ") + e.what());
  }
  if (!(doc.clock_mhz > 0.0))
    throw ParseError("'$.clock_mhz' must be positive");
  return doc;
}

CostDocument load_cost_document(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ArgumentError("cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_cost_document(buffer.str());
}

std::string cost_document_to_json(const CostDocument &doc) {
  json deps = json::array();
  for (const auto &d : doc.loop.deps)
    deps.push_back({{"kind", to_string(d.kind)}, {"latency", d.latency}, {"distance", d.distance}});
  json accesses = json::array();
  for (const auto &a : doc.loop.array_accesses)
    accesses.push_back({{"array_id", a.array_id},
                        {"reads_per_iter", a.reads_per_iter},
                        {"writes_per_iter", a.writes_per_iter}});
  json arrays = json::object();
  for (const auto &[id, p] : doc.partition.arrays)
    arrays[id] = {{"partitioned", p.partitioned == Partitioning::Complete ? "complete" : "none"},
                  {"ports_per_bank", p.ports_per_bank}};
  json j = {{"loop",
             {{"name", doc.loop.name},
              {"trip_count", doc.loop.trip_count},
              {"depth", doc.loop.depth},
              {"deps", deps},
              {"array_accesses", accesses}}},
            {"partition", {{"default_ports", doc.partition.default_ports}, {"arrays", arrays}}},
            {"clock_mhz", doc.clock_mhz}};
  return j.dump(2);
}

} // namespace dtwin::hls
