#include "tap/trace.hpp"

#include <fmt/format.h>

#include <array>
#include <charconv>
#include <istream>
#include <ostream>

#include "tap/error.hpp"

namespace tap {

namespace {

constexpr std::array<std::string_view, 7> kEventNames = {"Send", "Receive", "Conf", "Auth",
                                                         "Alert", "ServiceStart", "ServiceHalt"};

const Term& absent() {
  static const Term t = Term::atom("-");
  return t;
}

bool is_absent(const Term& t) { return t == absent(); }

}  // namespace

std::string_view to_string(EventKind k) { return kEventNames.at(static_cast<std::size_t>(k)); }

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == s) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

Term RunData::to_term() const {
  return Term::cat({Term::atom("run"), n0.value_or(absent()), n1.value_or(absent()),
                    ticket ? digest_term(*ticket) : absent(), session ? digest_term(*session) : absent(),
                    Term::id(customer)});
}

std::optional<RunData> RunData::from_term(const Term& t) {
  if (!t.is(Term::Tag::Cat) || t.parts().size() != 6) return std::nullopt;
  const auto p = t.parts();
  if (!p[0].is(Term::Tag::Atom) || p[0].text() != "run" || !p[5].is(Term::Tag::Id)) return std::nullopt;
  RunData r;
  if (!is_absent(p[1])) r.n0 = p[1];
  if (!is_absent(p[2])) r.n1 = p[2];
  try {
    if (!is_absent(p[3])) r.ticket = Digest::from(p[3].data());
    if (!is_absent(p[4])) r.session = Digest::from(p[4].data());
  } catch (const Error&) {
    return std::nullopt;
  }
  r.customer = p[5].text();
  return r;
}

std::string format_event(const TraceEvent& e) {
  return fmt::format("{:.6f}\t{}\t{}\t{}\t{}\t{}\t{}", e.time, to_string(e.kind), e.actor, e.peer, e.origin,
                     e.label, to_hex(e.payload.encoding()));
}

TraceEvent parse_event(std::string_view line) {
  std::array<std::string_view, 7> f;
  std::size_t n = 0;
  while (n < f.size()) {
    const auto tab = line.find('\t');
    f[n++] = line.substr(0, tab);
    if (tab == std::string_view::npos) break;
    line.remove_prefix(tab + 1);
  }
  if (n != f.size()) throw Error(Errc::Malformed, "trace line needs 7 tab-separated fields");

  TraceEvent e;
  try {
    e.time = std::stod(std::string(f[0]));
  } catch (const std::exception&) {
    throw Error(Errc::Malformed, "bad trace time");
  }
  const auto kind = parse_event_kind(f[1]);
  if (!kind) throw Error(Errc::Malformed, "unknown event kind " + std::string(f[1]));
  e.kind = *kind;
  e.actor = f[2];
  e.peer = f[3];
  e.origin = f[4];
  e.label = f[5];
  e.payload = Term::deserialize(from_hex(f[6]));
  return e;
}

void write_trace(std::ostream& out, const Trace& trace) {
  for (const auto& e : trace) out << format_event(e) << '\n';
}

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    trace.push_back(parse_event(line));
  }
  return trace;
}

}  // namespace tap
