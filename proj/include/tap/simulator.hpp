#pragma once

// Deterministic discrete-event network of ME, P and C parties with an
// optional Dolev-Yao intruder.
//
// Every unicast takes `latency` seconds. Messages on a blocked link are lost
// unless the intruder hears the sender, reaches the receiver and relays; a
// relayed message arrives after latency + relay_delay + latency with origin
// "Z". The intruder records everything it hears before acting on it.

#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "tap/counters.hpp"
#include "tap/intruder.hpp"
#include "tap/roles.hpp"
#include "tap/scenario_io.hpp"
#include "tap/trace.hpp"

namespace tap {

inline const std::string kIntruderId = "Z";

/// Start of a named phase: index into the trace and per-party counters then.
struct PhaseMark {
  std::string name;
  std::size_t trace_begin = 0;
  std::map<std::string, OpCounts> ops_at_start;
};

class NetworkSim {
 public:
  explicit NetworkSim(ScenarioConfig cfg);

  /// Processes events until the queue is empty. Throws Error(BudgetExhausted)
  /// after cfg.max_events events.
  void run();
  /// Processes events with time <= t.
  void run_until(Seconds t);

  void schedule(const ScheduleItem& item);

  /// Sends `body` as the intruder. Throws Error(UnderivableSpoof) when the
  /// body is not derivable from the intruder's knowledge.
  void spoof(MsgKind kind, const std::string& from, const std::string& to, const Term& body);

  Seconds now() const { return now_; }
  const ScenarioConfig& config() const { return cfg_; }
  const Trace& trace() const { return trace_; }
  const PartyState& party(const std::string& id) const;
  std::vector<std::string> party_ids() const;
  bool has_party(const std::string& id) const { return parties_.contains(id); }

  /// Intruder knowledge, or nullptr without an intruder.
  const Knowledge* intruder() const { return knowledge_.get(); }
  const KeyRegistry& registry() const { return *registry_; }

  /// Online counters per party; key-chain derivation is in precompute().
  const std::map<std::string, OpCounts>& ops() const { return ops_; }
  const std::map<std::string, OpCounts>& precompute() const { return precompute_; }
  const std::vector<PhaseMark>& phases() const { return phases_; }

  /// Every secret a leak check should look for: session keys, customer keys,
  /// group keys, chain generators and interval keys, as byte-string terms.
  std::vector<Term> secrets() const;

  /// Deepest honest message body sent so far.
  std::size_t max_honest_depth() const { return max_honest_depth_; }

 private:
  struct Deliver {
    ProtocolMessage msg;
    std::string recipient;
  };
  struct Forward {  // intruder transmission
    ProtocolMessage msg;
    std::string recipient;
  };
  struct Wake {
    std::string party;
  };
  struct Action {
    ScheduleItem item;
  };
  struct Event {
    Seconds time;
    std::uint64_t seq;
    std::variant<Deliver, Forward, Wake, Action> what;
    bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };

  void bootstrap();
  void push(Seconds at, std::variant<Deliver, Forward, Wake, Action> what);
  void process(Event e);
  void apply(const std::string& id, StepResult r);
  template <class F>
  void transition(const std::string& id, F&& f);
  void route(const ProtocolMessage& m);
  void intruder_forward(const ProtocolMessage& m, const std::string& to, Seconds extra_delay);
  bool blocked(const std::string& a, const std::string& b) const;
  bool hears(const std::string& party) const;
  void run_action(const ScheduleItem& item);
  void validate_cc(const ScheduleItem& item) const;

  ScenarioConfig cfg_;
  std::shared_ptr<KeyRegistry> registry_;
  std::map<std::string, PartyState> parties_;
  std::unique_ptr<Knowledge> knowledge_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  std::size_t processed_ = 0;
  Seconds now_ = 0;
  Trace trace_;
  std::map<std::string, OpCounts> ops_;
  std::map<std::string, OpCounts> precompute_;
  std::vector<PhaseMark> phases_;
  std::map<std::size_t, int> rule_hits_;
  std::size_t max_honest_depth_ = 0;
  std::map<std::string, std::string> provider_group_;  // P -> ME
  std::map<std::string, std::set<std::string>> neighbors_;  // ME -> neighbouring MEs
};

struct CcOutcome {
  std::optional<Key> initiator_key;
  std::optional<Key> responder_key;
  bool authenticated = false;  // responder emitted Auth
  bool alert = false;          // responder rejected the confirmation
  std::vector<std::string> script;  // "from->to:Kind" in send order
};

/// Runs one customer-to-customer exchange on an already-running simulation.
/// Throws Error(ScenarioRoutingFailure) when the associations do not match
/// the requested scenario.
CcOutcome cc_mutual(NetworkSim& sim, const std::string& initiator, const std::string& responder,
                    CcScenario scenario, const std::string& tamper = "none");

struct RunResult {
  Trace trace;
  AttackVerdict verdict = AttackVerdict::NoAttack;
  bool precedes_holds = true;
  std::vector<PhaseMark> phases;
  std::map<std::string, OpCounts> ops;
  std::map<std::string, OpCounts> precompute;
  std::map<std::string, CcOutcome> cc;  // by phase name
};

/// Builds the network, runs the schedule to quiescence and classifies the
/// trace with the checker.
RunResult run_scenario(const ScenarioConfig& cfg);

}  // namespace tap
