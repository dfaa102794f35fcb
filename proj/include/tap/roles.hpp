#pragma once

// State machines for the three roles: ME (ticket issuer), P (service
// provider) and C (customer).
//
// Message bodies (K_ME+ is the ME's public seal key, u0 the customer part of
// a grant):
//
//   BroadcastPK     cat(id ME, bytes K_ME+)
//   JoinReq         seal(K_ME+, cat(id C, N0))
//   ResendJoin      seal(K_ME+, cat(id C, N0', N0))
//   AlertJoin       seal(K_ME+, cat(id C, N0', N0, T_k, atom alert))
//   JoinFwd         JoinReq / ResendJoin / AlertJoin body, unchanged
//   TicketGrant     cat(u0, seal(K_G, cat(bytes V_i, N1, T_k)) [, atom alert])
//                   u0 = seal(K_C, cat(id P, N0+1, N1, T_k, num T_R, K_S))
//   U0Deliver       u0
//   Limited         cat(u0, atom limited)
//   ChallengeResp   seal(K_S, cat(id C, N1+1))
//   SwitchReq       cat(seal(K_S, cat(id C, N0)), T_k, bytes h(ME))
//   ResendSwitch    cat(seal(K_S, cat(id C, N0', N0)), T_k, bytes h(ME))
//   SwitchChallenge seal(K_S, cat(id P, N1, N0+1))
//   SwitchFwd       cat(SwitchReq body, id C)
//   ReGrant         cat(u0', seal(K_G, cat(bytes V_i, N1, T_k')))
//                   u0' = seal(K_C, cat(T_k', num T_R, K_S', N1, N0+1, id P))
//   Alert           cat(atom step, id C)
//   CCInit          cat(seal(K_S^i, cat(id C_i, N0, bytes K_i^p)), T_k^i)
//   CCReply         cat(seal(K_S^j, cat(id C_j, N0+1, N1, bytes K_j^p)), T_k^j)
//   CCFwd           cat(atom init|reply, CCInit or CCReply body, id requester)
//   PartialKeyResp  P to C: seal(K_S, inner payload)
//                   ME to P: seal(K_G, cat(id requester, inner payload))
//   CCConfirm       seal(K_ij, cat(id C_i, N1+1))
//
// T_k is Ticket::to_term(), K_S is to_term(SessionKey).

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "tap/ticket.hpp"
#include "tap/trace.hpp"

namespace tap {

enum class Role : std::uint8_t { ME, P, C };

enum class MsgKind : std::uint8_t {
  BroadcastPK,
  JoinReq,
  JoinFwd,
  TicketGrant,
  U0Deliver,
  ChallengeResp,
  SwitchReq,
  SwitchFwd,
  ReGrant,
  Limited,
  Alert,
  CCInit,
  CCReply,
  PartialKeyResp,
  ResendJoin,
  ResendSwitch,
  AlertJoin,
  SwitchChallenge,
  CCFwd,
  CCConfirm,
};

std::string_view to_string(MsgKind k);
std::optional<MsgKind> parse_msg_kind(std::string_view s);

inline const std::string kBroadcastAddress = "*";

struct ProtocolMessage {
  MsgKind kind = MsgKind::Alert;
  std::string from;    // claimed sender
  std::string to;      // recipient, or kBroadcastAddress
  Term body = Term::atom("");
  std::string origin;  // who actually transmitted it
};

struct ProtocolConfig {
  Seconds latency = 1.0;
  int timeout_rtts = 2;
  bool restricted = false;

  /// One round trip is C -> P -> ME -> P -> C.
  Seconds timeout() const { return timeout_rtts * 4 * latency; }
  Seconds duplicate_window() const { return 4 * timeout(); }
};

/// One group's key material as held by a single party.
struct ChainView {
  std::string me;
  Digest me_hash;  // h(ME), used for switch routing
  Key group_key;
  std::shared_ptr<const KeyChain> chain;
  std::shared_ptr<const IndexTree> tree;
  RetrievalMode mode = RetrievalMode::Mode1;
  Seconds chain_start_local = 0;
  DriftEstimator drift;
};

struct CustomerRecord {
  Key key;  // K_C
  Term profile = Term::atom("");
  std::optional<std::string> password;
};

/// Nonce used in place of N0 by registered customers.
Term password_nonce(const std::string& password);

/// Tier atom of a profile term cat(atom tier, ...) or the atom itself.
std::string profile_tier(const Term& profile);

struct JoinRequest {
  std::string via;  // forwarding P
  Digest body_fp;
  std::string customer;
  Term n0 = Term::atom("");
  std::optional<Term> prev_n0;
  bool alert_join = false;
  Seconds received = 0;
};

struct MEData {
  Key private_key;
  Key public_key;
  ChainView own;
  std::map<Digest, ChainView> neighbors;  // by h(ME)
  std::map<std::string, CustomerRecord> customers;
  std::vector<JoinRequest> batch;
  std::optional<Seconds> batch_deadline;
  std::map<Digest, int> seen_bodies;
  std::map<std::string, std::vector<std::pair<Seconds, Term>>> recent_joins;  // customer -> (time, N0)
};

enum class RunKind : std::uint8_t { IA, RA1, RA2 };

/// Label of the final message of each run kind: M6, M3, M5.
std::string_view final_step(RunKind k);

struct PendingChallenge {
  RunKind kind = RunKind::IA;
  Term n1 = Term::atom("");
  std::optional<Term> n0;
  Key session;
  Digest ticket_fp;
  Seconds deadline = 0;
  bool limited = false;
};

struct PData {
  ChainView own;
  Key me_public;
  std::map<Digest, Key> neighbor_group_keys;  // h(ME) -> K_G of neighbouring groups
  std::map<std::string, PendingChallenge> pending;
  std::map<std::string, Key> sessions;
  std::map<Digest, int> seen_switch;
  std::set<std::string> limited_tiers;
  std::string tamper_partial_for;  // fault injection: corrupt partial keys sent to this customer
};

struct CRun {
  enum class Kind : std::uint8_t { Join, Switch } kind = Kind::Join;
  std::string provider;
  Term n0 = Term::atom("");
  std::optional<Term> prev_n0;
  Seconds deadline = 0;
  int timeouts = 0;
};

struct CcRun {
  bool initiator = false;
  std::string peer;
  std::optional<Term> n0;
  std::optional<Term> n1;
  Bytes own_partial;
  std::optional<Key> kij;
};

struct CData {
  Key customer_key;
  std::optional<std::string> password;
  std::map<std::string, std::pair<std::string, Key>> broadcasts;  // P -> (ME, K_ME+)
  std::string provider;
  std::string me;
  std::optional<Ticket> ticket;
  std::optional<SessionKey> session;
  std::optional<CRun> run;
  std::optional<CcRun> cc;
  bool auto_join = true;
  bool reconnect_on_limited = false;
  std::vector<std::string> alternates;
};

struct PartyState {
  Role role = Role::C;
  std::string id;
  Seconds clock_offset = 0;
  ProtocolConfig config;
  std::shared_ptr<const KeyRegistry> registry;
  std::mt19937_64 rng;
  std::variant<MEData, PData, CData> data;

  Seconds local(Seconds now) const { return now + clock_offset; }

  MEData& me() { return std::get<MEData>(data); }
  PData& p() { return std::get<PData>(data); }
  CData& c() { return std::get<CData>(data); }
  const MEData& me() const { return std::get<MEData>(data); }
  const PData& p() const { return std::get<PData>(data); }
  const CData& c() const { return std::get<CData>(data); }
};

struct StepResult {
  PartyState state;
  std::vector<ProtocolMessage> out;
  std::vector<TraceEvent> events;
  std::vector<Seconds> wakeups;  // global times at which tick() wants to run
};

/// Pure transition on an incoming message. Unknown or unexpected messages
/// are dropped after the Receive event.
StepResult step(PartyState state, const ProtocolMessage& incoming, Seconds now);

/// Timer transition: ME batch flush, P challenge timeouts, C lost-response
/// recovery. Idempotent when nothing is due.
StepResult tick(PartyState state, Seconds now);

/// P announces its ME's public seal key.
StepResult broadcast_pk(PartyState p, Seconds now);

/// Throws Error(NoBroadcastSeen) when C has not heard `provider`.
StepResult start_join(PartyState c, const std::string& provider, Seconds now, std::optional<Term> n0 = {});

/// Throws Error(NoTicket) when C has no ticket yet.
StepResult start_switch(PartyState c, const std::string& provider, Seconds now);

enum class RecoverVariant : std::uint8_t { Join, Switch, SwitchAlert };

/// Resend carrying the new and the previous nonce. Throws Error(NoTicket)
/// without a pending run and Error(NoBroadcastSeen) for SwitchAlert when the
/// provider's broadcast was never heard.
StepResult recover_lost(PartyState c, RecoverVariant variant, Seconds now);

/// C_i opens a customer-to-customer exchange with `peer`. Throws
/// Error(NoTicket).
StepResult start_cc(PartyState c, const std::string& peer, Seconds now);

/// Grants a forwarded join immediately (no batching). Drops unknown
/// customers.
StepResult me_grant(PartyState me, const ProtocolMessage& fwd, Seconds now, bool alert = false);

/// K_ij = H((K_i^p xor N1) || (K_j^p xor N0)).
Key cc_session_key(ByteView partial_i, ByteView partial_j, const Term& n0, const Term& n1);

}  // namespace tap
