#pragma once

// Per-run operation and message counts, the reference cost rows and the run
// report printed by the CLI.
//
// Report JSON (schema "tap-run-report/1"):
//
//   {"schema": "tap-run-report/1", "scenario": "...", "seed": 1, "mode": 1,
//    "restricted": false, "verdict": "NoAttack", "expected_verdict": "NoAttack",
//    "precedes_holds": true,
//    "phases": [{"name": "IA", "events": [b, e],
//                "metrics": {"hash": 7, "xor": 2, "seal": 4, "open": 4, "modexp": 0,
//                            "retrieval_hash": 0, "unicast": 5, "broadcast": 1,
//                            "per_party": {"C1": {...}}},
//                "reference": {"row": "IA", "hash": 3, "unicast": 5},
//                "match": {"unicast": true, "hash": false},
//                "notes": ["..."]}],
//    "precompute": {"ME1": {"hash": 34, ...}},
//    "claims": [{"claimant": "C1", "partner": "P1", "kind": "Aliveness", "holds": true}],
//    "cc": {"CC": {"keys_equal": true, "authenticated": true, "alert": false,
//                  "script": ["C1->P1:CCInit", ...]}},
//    "checks": [{"what": "verdict", "ok": true, "detail": "..."}],
//    "ok": true}

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tap/counters.hpp"
#include "tap/simulator.hpp"
#include "tap/trace_checker.hpp"

namespace tap {

inline constexpr const char* kReportSchema = "tap-run-report/1";

struct PartyMetrics {
  OpCounts ops;
  std::uint64_t unicast = 0;
  std::uint64_t broadcast = 0;
};

struct Metrics {
  OpCounts ops;  // summed over parties
  std::uint64_t unicast_msgs = 0;
  std::uint64_t broadcast_msgs = 0;
  std::map<std::string, PartyMetrics> per_party;
};

/// Message counts over trace[begin, end) plus the counter delta
/// ops_end - ops_begin. A unicast is an honest Send whose peer is not the
/// broadcast address; intruder transmissions are not counted.
Metrics count_run(const Trace& trace, std::size_t begin, std::size_t end,
                  const std::map<std::string, OpCounts>& ops_begin, const std::map<std::string, OpCounts>& ops_end);

/// Message counts only, over the whole trace.
Metrics count_run(const Trace& trace);

struct ReferenceRow {
  std::string name;
  std::uint64_t hash = 0;
  std::uint64_t unicast = 0;
};

/// Published cost row for "IA", "RA1" or "RA2".
std::optional<ReferenceRow> reference_row(std::string_view phase);

struct PhaseReport {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
  Metrics metrics;
  std::optional<ReferenceRow> reference;
  bool unicast_match = true;
  bool hash_match = true;
  std::vector<std::string> notes;
};

struct ClaimReport {
  std::string claimant;
  std::string partner;
  std::vector<Verdict> verdicts;
  bool all_hold() const;
};

struct CcReport {
  bool keys_equal = false;
  bool authenticated = false;
  bool alert = false;
  std::vector<std::string> script;
};

struct Check {
  std::string what;
  bool ok = true;
  std::string detail;
};

struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  RetrievalMode mode = RetrievalMode::Mode1;
  bool restricted = false;
  AttackVerdict verdict = AttackVerdict::NoAttack;
  std::optional<AttackVerdict> expected_verdict;
  bool precedes_holds = true;
  std::vector<PhaseReport> phases;
  std::map<std::string, OpCounts> precompute;
  std::vector<ClaimReport> claims;
  std::map<std::string, CcReport> cc;
  std::vector<Check> checks;

  /// Every expectation of the scenario was met.
  bool ok() const;
};

RunReport build_report(const ScenarioConfig& cfg, const RunResult& result);

std::string format_report(const RunReport& r);
nlohmann::json report_json(const RunReport& r);

}  // namespace tap
