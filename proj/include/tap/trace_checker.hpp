#pragma once

// Authentication properties evaluated over recorded traces.
//
// A claim is made by a claimant about a partner. Each completed claimant run
// (a Conf or Auth signal by the claimant naming the partner) is checked over
// its window: from the customer's last request before the signal to the
// first ServiceStart / ServiceHalt / Alert bound to the run's N1.
//
//   Aliveness            partner sent something in the window
//   WeakAgreement        ... and some partner event names the claimant
//   NonInjAgreement      ... and the partner signalled the same N1 with equal
//                        N0, ticket and session-key digests where both know them
//   NonInjSynchronization ... and every delivery between the pair came from
//                        its claimed sender, matches a send, and the sends
//                        follow an intended message order
//
// Each level includes the previous one, so the hierarchy holds by
// construction.

#include <optional>
#include <string>
#include <vector>

#include "tap/trace.hpp"

namespace tap {

enum class ClaimKind : std::uint8_t { Precedes, Aliveness, WeakAgreement, NonInjAgreement, NonInjSynchronization };

std::string_view to_string(ClaimKind k);

struct Claim {
  ClaimKind kind = ClaimKind::Aliveness;
  std::string initiator;  // claimant
  std::string responder;  // partner
  std::optional<Term> data;
};

struct Verdict {
  Claim claim;
  bool holds = true;
  std::optional<std::size_t> witness;  // offending event index
  std::size_t runs_checked = 0;
};

struct EventPattern {
  EventKind kind = EventKind::Conf;
  std::optional<std::string> actor;
  std::optional<std::string> peer;
};

/// Every event matching `auth` must be preceded by an event matching `conf`
/// whose actor is the Auth's peer, whose peer is the Auth's actor and whose
/// N1 equals the Auth's N1. The Auth itself must have been triggered by a
/// message physically sent by its peer (origin == peer).
Verdict check_precedes(const Trace& trace, const EventPattern& conf = {EventKind::Conf, {}, {}},
                       const EventPattern& auth = {EventKind::Auth, {}, {}});

Verdict check_claim(const Trace& trace, const Claim& claim);

/// The four claims of `claimant` about `partner`, weakest first.
std::vector<Verdict> check_all_claims(const Trace& trace, const std::string& claimant, const std::string& partner);

}  // namespace tap
