#pragma once

// Trace events emitted by the role state machines and the simulator, plus the
// line-delimited text form read by the checker and the CLI.
//
// One event per line, tab separated:
//   time  kind  actor  peer  origin  label  payload-hex
// time is printed with 6 decimals; payload-hex is the canonical term encoding.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tap/message_algebra.hpp"

namespace tap {

enum class EventKind : std::uint8_t { Send, Receive, Conf, Auth, Alert, ServiceStart, ServiceHalt };

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

/// Data certified by Conf / Auth / ServiceStart / Alert signals. Fields a
/// party cannot see (P never learns N0 in initial authentication) are absent.
struct RunData {
  std::optional<Term> n0;
  std::optional<Term> n1;
  std::optional<Digest> ticket;   // fingerprint of T_k
  std::optional<Digest> session;  // fingerprint of the session key bytes
  std::string customer;

  /// cat(atom run, n0|-, n1|-, ticket|-, session|-, id customer)
  Term to_term() const;
  static std::optional<RunData> from_term(const Term& t);
};

struct TraceEvent {
  double time = 0;
  EventKind kind = EventKind::Send;
  std::string actor;
  std::string peer;
  std::string origin;  // physical transmitter for Receive; actor otherwise
  std::string label;   // message kind, or the step a signal refers to
  Term payload = Term::atom("");

  bool operator==(const TraceEvent&) const = default;
};

using Trace = std::vector<TraceEvent>;

std::string format_event(const TraceEvent& e);
TraceEvent parse_event(std::string_view line);  // throws Error(Malformed)

void write_trace(std::ostream& out, const Trace& trace);
Trace read_trace(std::istream& in);

}  // namespace tap
