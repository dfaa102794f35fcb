#pragma once

// Scenario files: JSON documents describing topology, clocks, intruder
// behaviour, the action schedule and the expected outcome.
//
//   {
//     "name": "honest_ia", "seed": 1, "mode": 1, "restricted": false,
//     "latency": 1.0, "timeout_rtts": 2, "max_events": 100000,
//     "groups": [{"me": "ME1", "providers": ["P1"], "neighbors": ["ME2"],
//                 "chain_length": 16, "duration": 1600, "index": 3, "offset": 5}],
//     "customers": [{"id": "C1", "profile": "standard", "password": "pw",
//                    "auto_join": true, "reconnect_on_limited": false,
//                    "alternates": ["P2"]}],
//     "limited": [{"provider": "P1", "tier": "basic"}],
//     "clock_offsets": {"P1": 0.25},
//     "blocked_links": [["C1", "P2"]],
//     "intruder": {"reach": ["C1", "P1"], "relay": true, "relay_delay": 0,
//                  "rules": [{"kind": "JoinReq", "from": "C1", "to": "P1", "nth": 1,
//                             "action": "replay", "target": "P2", "delay": 0}]},
//     "conditions": {"customer": "C1", "provider": "P1",
//                    "C1": true, "C2": true, "C3": true, "C4": true, "C5": true},
//     "schedule": [{"at": 0, "action": "broadcast", "provider": "P1", "phase": "IA"},
//                  {"at": 30, "action": "switch", "customer": "C1", "provider": "P2", "phase": "RA1"},
//                  {"at": 60, "action": "cc", "customer": "C1", "peer": "C2",
//                   "scenario": "SameP", "tamper": "none", "phase": "CC"}],
//     "expect": {"verdict": "NoAttack", "unicast": {"IA": 5},
//                "alerts": [{"actor": "P2", "label": "M6"}],
//                "claims": [{"claimant": "C1", "partner": "P1", "holds": true}]}
//   }
//
// Any parse or validation failure raises Error(ConfigParse).

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tap/keychain.hpp"
#include "tap/roles.hpp"

namespace tap {

enum class AttackVerdict : std::uint8_t { NoAttack, AttackFailed, AttackSucceeded };
std::string_view to_string(AttackVerdict v);
std::optional<AttackVerdict> parse_attack_verdict(std::string_view s);

enum class CcScenario : std::uint8_t { SameP, SameGroup, CrossGroup };
std::string_view to_string(CcScenario s);

struct GroupConfig {
  std::string me;
  std::vector<std::string> providers;
  std::vector<std::string> neighbors;  // ME ids of neighbouring groups
  std::uint32_t chain_length = 16;
  std::uint64_t duration = 1600;
  std::uint64_t index = 0;
  std::uint64_t offset = 0;
};

struct CustomerConfig {
  std::string id;
  std::string profile = "standard";
  std::optional<std::string> password;
  bool auto_join = true;
  bool reconnect_on_limited = false;
  std::vector<std::string> alternates;
};

struct IntruderRule {
  enum class Action : std::uint8_t { Block, Replay, Redirect };
  std::optional<MsgKind> kind;
  std::optional<std::string> from;
  std::optional<std::string> to;
  int nth = 0;  // 0 = every match
  Action action = Action::Block;
  std::string target;
  Seconds delay = 0;
};

struct IntruderConfig {
  bool present = false;
  bool reach_all = true;        // true when no reach list was given
  std::set<std::string> reach;  // parties the intruder can hear and transmit to
  bool relay = false;           // relays traffic between parties that cannot reach each other
  Seconds relay_delay = 0;      // intruder-internal delay between its two radios
  std::vector<IntruderRule> rules;
};

/// Conditions of the conditional man-in-the-middle scenario.
struct MitmConditions {
  std::string customer;
  std::string provider;
  bool c1 = true;  // intruder can reach the provider
  bool c2 = true;  // customer and provider cannot reach each other
  bool c3 = true;  // intruder can reach the customer
  bool c4 = true;  // negligible relay delay
  bool c5 = true;  // all of the above
};

struct ScheduleItem {
  enum class Action : std::uint8_t { Broadcast, Join, Switch, CC };
  Seconds at = 0;
  Action action = Action::Broadcast;
  std::string customer;
  std::string provider;
  std::string peer;
  CcScenario cc = CcScenario::SameP;
  std::string tamper = "none";  // none | initiator | responder
  std::string phase;
};

struct ExpectedAlert {
  std::string actor;
  std::string label;
};

struct ExpectedClaim {
  std::string claimant;
  std::string partner;
  bool holds = true;
};

struct Expectation {
  std::optional<AttackVerdict> verdict;
  std::map<std::string, std::uint64_t> unicast;  // by phase
  std::vector<ExpectedAlert> alerts;
  std::vector<ExpectedClaim> claims;
  std::optional<bool> cc_keys_equal;
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t seed = 1;
  RetrievalMode mode = RetrievalMode::Mode1;
  bool restricted = false;
  Seconds latency = 1.0;
  int timeout_rtts = 2;
  Seconds chain_start = 0;
  std::size_t max_events = 100000;
  std::vector<GroupConfig> groups;
  std::vector<CustomerConfig> customers;
  std::map<std::string, std::set<std::string>> limited;  // provider -> limited tiers
  std::map<std::string, Seconds> clock_offsets;
  std::vector<std::pair<std::string, std::string>> blocked_links;
  IntruderConfig intruder;
  std::optional<MitmConditions> conditions;
  std::vector<ScheduleItem> schedule;
  Expectation expect;
};

ScenarioConfig parse_scenario(std::string_view json_text);
ScenarioConfig load_scenario(const std::filesystem::path& file);

/// Rewrites reachability, blocked links and relay delay from the condition
/// flags. Throws Error(ConfigParse) when C5 contradicts C1..C4.
void apply_conditions(ScenarioConfig& cfg);

}  // namespace tap
