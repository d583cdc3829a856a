// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <map>

#include "dtwin/error.hpp"
#include "dtwin/hlscost.hpp"
#include "dtwin/rng.hpp"

using namespace dtwin;
using namespace dtwin::hls;

namespace {

// Cycle-stepped reference: issue iteration i at cycle i * ii, place each
// memory access into the first free port slot inside that iteration's
// issue window, then check every loop-carried dependency pair.
bool oracle_feasible(const LoopSpec &loop, std::uint64_t ii, const PartitionSpec &part) {
  std::map<std::string, std::uint64_t> per_array;
  for (const auto &a : loop.array_accesses)
    per_array[a.array_id] += a.reads_per_iter + a.writes_per_iter;

  std::map<std::string, std::map<std::uint64_t, std::uint64_t>> used;
  for (std::uint64_t i = 0; i < loop.trip_count; ++i) {
    const std::uint64_t start = i * ii;
    for (const auto &[id, count] : per_array) {
      const auto p = part.lookup(id);
      if (p.partitioned == Partitioning::Complete)
        continue;
      std::uint64_t left = count;
      for (std::uint64_t c = start; c < start + ii && left > 0; ++c) {
        auto &slot = used[id][c];
        const auto take = std::min(left, p.ports_per_bank - slot);
        slot += take;
        left -= take;
      }
      if (left > 0)
        return false;
    }
  }
  for (const auto &d : loop.deps)
    for (std::uint64_t i = 0; i + d.distance < loop.trip_count; ++i)
      if ((i + d.distance) * ii < i * ii + d.latency)
        return false;
  return true;
}

std::uint64_t oracle_min_ii(const LoopSpec &loop, const PartitionSpec &part) {
  for (std::uint64_t ii = 1;; ++ii)
    if (oracle_feasible(loop, ii, part))
      return ii;
}

LoopSpec random_loop(Rng &rng) {
  LoopSpec loop;
  loop.trip_count = 1 + rng.below(40);
  loop.depth = 1 + rng.below(20);
  const auto deps = rng.below(4);
  for (std::uint64_t k = 0; k < deps; ++k)
    loop.deps.push_back({rng.below(2) ? DepKind::RAW : DepKind::WAR, 1 + rng.below(8),
                         1 + rng.below(5)});
  const auto arrays = rng.below(4);
  for (std::uint64_t k = 0; k < arrays; ++k)
    loop.array_accesses.push_back({"a" + std::to_string(rng.below(3)), rng.below(6),
                                   rng.below(3)});
  return loop;
}

PartitionSpec random_partition(Rng &rng) {
  PartitionSpec p;
  p.default_ports = 1 + rng.below(2);
  for (int k = 0; k < 3; ++k) {
    if (rng.below(3) == 0)
      continue;
    p.arrays["a" + std::to_string(k)] = {rng.below(2) ? Partitioning::Complete : Partitioning::None,
                                         1 + rng.below(3)};
  }
  return p;
}

} // namespace

TEST_CASE("probing narrative") {
  LoopSpec free{"free", 200, 10, {}, {}};
  CHECK(min_feasible_ii(free) == 1);
  CHECK(hazard_check(free, 1).empty());
  CHECK(loop_latency(free, 1) == 209);

  LoopSpec two{"two", 200, 10, {{DepKind::RAW, 2, 1}}, {}};
  CHECK(hazard_check(two, 1).size() == 1);
  CHECK(hazard_check(two, 2).empty());
  CHECK(min_feasible_ii(two) == 2);
  CHECK(loop_latency(two, 2) == 408);
  CHECK_THROWS_AS(loop_latency(two, 1), ArgumentError);

  LoopSpec three{"three", 200, 10, {{DepKind::RAW, 3, 1}}, {}};
  CHECK(min_feasible_ii(three) == 3);
  CHECK(hazard_check(three, 2).size() == 1);

  LoopSpec far{"far", 4, 3, {{DepKind::RAW, 9, 4}}, {}};
  CHECK(recurrence_bound(far) == 1);
  CHECK(throughput_estimate(free, 2, 100.0) == doctest::Approx(5e7));
}

TEST_CASE("port bounds and partitioning") {
  LoopSpec loop{"ports", 16, 4, {}, {{"w", 3, 1}, {"w", 1, 0}, {"h", 1, 1}}};
  PartitionSpec none;
  CHECK(resource_bound(loop, none) == 3);
  auto r = hazard_check(loop, 1, none);
  REQUIRE(r.ports.size() == 1);
  CHECK(r.ports[0].array_id == "w");
  CHECK(r.ports[0].accesses == 5);
  CHECK_FALSE(r.feasible());
  CHECK(hazard_check(loop, 3, none).feasible());

  PartitionSpec split;
  split.arrays["w"] = {Partitioning::Complete, 2};
  CHECK(resource_bound(loop, split) == 1);
  CHECK(min_feasible_ii(loop, split) == 1);

  PartitionSpec wide;
  wide.default_ports = 5;
  CHECK(resource_bound(loop, wide) == 1);

  PartitionSpec broken;
  broken.default_ports = 0;
  CHECK_THROWS_AS(resource_bound(loop, broken), ArgumentError);
}

TEST_CASE("analytic model agrees with the cycle-stepped oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto loop = random_loop(rng);
    const auto part = random_partition(rng);
    const auto expected = oracle_min_ii(loop, part);
    REQUIRE(min_feasible_ii(loop, part) == expected);
    for (std::uint64_t ii = 1; ii <= expected + 2; ++ii) {
      REQUIRE(hazard_check(loop, ii, part).feasible() == oracle_feasible(loop, ii, part));
      if (ii >= expected)
        CHECK(loop_latency(loop, ii, part) == loop.depth + (loop.trip_count - 1) * ii);
    }
  }
}

TEST_CASE("feasibility table") {
  LoopSpec two{"two", 200, 10, {{DepKind::RAW, 2, 1}}, {}};
  const auto rows = feasibility_table(two, {}, 200.0);
  REQUIRE(rows.size() == 3);
  CHECK_FALSE(rows[0].feasible);
  CHECK(rows[1].feasible);
  CHECK(rows[1].latency_cycles == 408);
  CHECK(rows[2].throughput == doctest::Approx(200e6 / 3.0));

  LoopSpec five{"five", 20, 3, {{DepKind::WAR, 5, 1}}, {}};
  CHECK(feasibility_table(five, {}, 100.0).size() == 5);
}

TEST_CASE("cost documents") {
  const auto doc = parse_cost_document(R"({"format_version": 1,
    "loop": {"name": "x", "trip_count": 8, "depth": 2,
             "deps": [{"kind": "WAR", "latency": 2}],
             "array_accesses": [{"array_id": "m", "reads_per_iter": 3}]},
    "partition": {"default_ports": 1, "arrays": {"m": {"partitioned": "complete"}}},
    "clock_mhz": 250})");
  CHECK(doc.loop.deps.at(0).kind == DepKind::WAR);
  CHECK(doc.loop.deps.at(0).distance == 1);
  CHECK(doc.partition.lookup("m").partitioned == Partitioning::Complete);
  CHECK(doc.clock_mhz == 250.0);
  const auto again = parse_cost_document(cost_document_to_json(doc));
  CHECK(cost_document_to_json(again) == cost_document_to_json(doc));

  CHECK_THROWS_AS(parse_cost_document(""), ParseError);
  CHECK_THROWS_AS(parse_cost_document("{}"), ParseError);
  CHECK_THROWS_AS(parse_cost_document(R"({"loop": {"trip_count": 1, "depth": 1, "dpes": []}})"),
                  ParseError);
  CHECK_THROWS_AS(parse_cost_document(R"({"loop": {"trip_count": -1, "depth": 1}})"),
                  ParseError);
  CHECK_THROWS_AS(parse_cost_document(R"({"loop": {"trip_count": 1, "depth": 1,
    "deps": [{"kind": "RAR", "latency": 1}]}})"), Error);

  for (const char *name : {"dep_free", "latency2", "latency3", "ports"})
    CHECK_NOTHROW(load_cost_document(std::string(DTWIN_FIXTURE_DIR) + "/hls/" + name + ".json"));
}
