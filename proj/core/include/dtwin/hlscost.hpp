// SPDX-License-Identifier: Apache-2.0
/**
 * @file   hlscost.hpp
 * @brief  Analytical cost model for pipelined loops: initiation-interval
 *         bounds, hazard checks, latency and throughput.
 */
#ifndef DTWIN_HLSCOST_HPP
#define DTWIN_HLSCOST_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dtwin::hls {

enum class DepKind { RAW, WAR };

std::string to_string(DepKind kind);
DepKind dep_kind_from_string(const std::string &text);

struct Dependency {
  DepKind kind = DepKind::RAW;
  std::uint64_t latency = 1;  ///< cycles from producing to consuming stage
  std::uint64_t distance = 1; ///< iteration distance
};

struct ArrayAccess {
  std::string array_id;
  std::uint64_t reads_per_iter = 0;
  std::uint64_t writes_per_iter = 0;
};

struct LoopSpec {
  std::string name;
  std::uint64_t trip_count = 1;
  std::uint64_t depth = 1;
  std::vector<Dependency> deps;
  std::vector<ArrayAccess> array_accesses;

  void validate() const;
};

enum class Partitioning { None, Complete };

struct ArrayPartition {
  Partitioning partitioned = Partitioning::None;
  std::uint64_t ports_per_bank = 2;
};

/// Arrays absent from the map are unpartitioned with `default_ports`.
struct PartitionSpec {
  std::map<std::string, ArrayPartition> arrays;
  std::uint64_t default_ports = 2;

  void validate() const;
  ArrayPartition lookup(const std::string &array_id) const;
};

/// max over deps of ceil(latency / distance), or 1. Dependencies whose
/// distance reaches trip_count never pair two real iterations and are skipped.
std::uint64_t recurrence_bound(const LoopSpec &loop);

/// max over unpartitioned arrays of ceil(accesses / ports), or 1.
std::uint64_t resource_bound(const LoopSpec &loop, const PartitionSpec &partition);

std::uint64_t min_feasible_ii(const LoopSpec &loop, const PartitionSpec &partition = {});

/// Dependencies with latency > ii * distance.
std::vector<Dependency> hazard_check(const LoopSpec &loop, std::uint64_t ii);

struct PortViolation {
  std::string array_id;
  std::uint64_t accesses;
  std::uint64_t ports;
};

struct HazardReport {
  std::vector<Dependency> dependencies;
  std::vector<PortViolation> ports;
  bool feasible() const { return dependencies.empty() && ports.empty(); }
};

/// Recurrence and port violations together.
HazardReport hazard_check(const LoopSpec &loop, std::uint64_t ii,
                          const PartitionSpec &partition);

/// depth + (trip_count - 1) * ii. Throws ArgumentError below the minimum II.
std::uint64_t loop_latency(const LoopSpec &loop, std::uint64_t ii,
                           const PartitionSpec &partition = {});

/// Steady-state iterations per second.
double throughput_estimate(const LoopSpec &loop, std::uint64_t ii, double clock_mhz);

struct FeasibilityRow {
  std::uint64_t ii;
  bool feasible;
  HazardReport hazards;
  /// Only meaningful when feasible.
  std::uint64_t latency_cycles;
  double throughput;
};

/// One row for each II from 1 to max(3, min_feasible_ii).
std::vector<FeasibilityRow> feasibility_table(const LoopSpec &loop,
                                              const PartitionSpec &partition,
                                              double clock_mhz);

/// JSON: {"loop": {...}, "partition": {...}, "clock_mhz": ...}; the
/// partition and clock are optional.
struct CostDocument {
  LoopSpec loop;
  PartitionSpec partition;
  double clock_mhz = 100.0;
};

CostDocument parse_cost_document(const std::string &text);
CostDocument load_cost_document(const std::string &path);
std::string cost_document_to_json(const CostDocument &doc);

} // namespace dtwin::hls

#endif // DTWIN_HLSCOST_HPP
