#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "support.hpp"
#include "tap/error.hpp"
#include "tap/simulator.hpp"
#include "tap/trace_checker.hpp"

using namespace tap;
using namespace tap::testing;

namespace {

Term n1(std::uint8_t b) {
  NonceValue v{};
  v.fill(b);
  return Term::nonce("N1", v);
}

Term run_term(std::uint8_t b) { return RunData{{}, n1(b), {}, {}, "C1"}.to_term(); }

TraceEvent ev(EventKind k, std::string actor, std::string peer, std::string label, Term payload = Term::atom(""),
              std::string origin = {}) {
  TraceEvent e;
  e.kind = k;
  e.actor = actor;
  e.peer = std::move(peer);
  e.origin = origin.empty() ? actor : std::move(origin);
  e.label = std::move(label);
  e.payload = std::move(payload);
  return e;
}

// Minimal honest C1/P1 run: request, grant delivery, response.
Trace honest_run() {
  const Term m1 = Term::atom("m1"), m5 = Term::atom("m5"), m6 = Term::atom("m6");
  Trace t{
      ev(EventKind::Send, "C1", "P1", "JoinReq", m1),
      ev(EventKind::Receive, "P1", "C1", "JoinReq", m1, "C1"),
      ev(EventKind::Send, "P1", "C1", "U0Deliver", m5),
      ev(EventKind::Receive, "C1", "P1", "U0Deliver", m5, "P1"),
      ev(EventKind::Conf, "C1", "P1", "M5", run_term(1), "P1"),
      ev(EventKind::Send, "C1", "P1", "ChallengeResp", m6),
      ev(EventKind::Receive, "P1", "C1", "ChallengeResp", m6, "C1"),
      ev(EventKind::Auth, "P1", "C1", "M6", run_term(1), "C1"),
      ev(EventKind::ServiceStart, "P1", "C1", "M6", run_term(1)),
  };
  for (std::size_t i = 0; i < t.size(); ++i) t[i].time = static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("an honest run satisfies every claim") {
  const auto t = honest_run();
  CHECK(check_precedes(t).holds);
  CHECK(check_precedes(t).runs_checked == 1);
  for (const auto& [x, y] : {std::pair{"C1", "P1"}, std::pair{"P1", "C1"}}) {
    for (const auto& v : check_all_claims(t, x, y)) {
      CAPTURE(to_string(v.claim.kind));
      CHECK(v.holds);
      CHECK(v.runs_checked == 1);
    }
  }
}

TEST_CASE("Auth without a matching Conf has a witness") {
  auto t = honest_run();
  t.erase(t.begin() + 4);
  const auto v = check_precedes(t);
  CHECK_FALSE(v.holds);
  REQUIRE(v.witness.has_value());
  CHECK(t[*v.witness].kind == EventKind::Auth);

  // Conf with a different N1 does not count.
  auto u = honest_run();
  u[4].payload = run_term(2);
  CHECK_FALSE(check_precedes(u).holds);

  // An Auth triggered by an intruder transmission fails.
  auto w = honest_run();
  w[7].origin = "Z";
  CHECK_FALSE(check_precedes(w).holds);
}

TEST_CASE("reordered or forged deliveries break synchronisation only") {
  auto t = honest_run();
  std::swap(t[2], t[5]);  // ChallengeResp sent before the grant delivery
  const auto v = check_all_claims(t, "P1", "C1");
  CHECK(v[0].holds);
  CHECK(v[1].holds);
  CHECK(v[2].holds);
  CHECK_FALSE(v[3].holds);

  auto f = honest_run();
  f[6].origin = "Z";
  CHECK_FALSE(check_claim(f, {ClaimKind::NonInjSynchronization, "P1", "C1", std::nullopt}).holds);
  CHECK(check_claim(f, {ClaimKind::NonInjAgreement, "P1", "C1", std::nullopt}).holds);
}

TEST_CASE("missing partner signal breaks agreement") {
  auto t = honest_run();
  t.erase(t.begin() + 4);  // C1 never signals Conf
  const auto v = check_all_claims(t, "P1", "C1");
  CHECK(v[1].holds);
  CHECK_FALSE(v[2].holds);
  CHECK_FALSE(v[3].holds);
}

TEST_CASE("claim data filter") {
  const auto t = honest_run();
  CHECK(check_claim(t, {ClaimKind::Aliveness, "P1", "C1", run_term(1)}).runs_checked == 1);
  CHECK(check_claim(t, {ClaimKind::Aliveness, "P1", "C1", run_term(3)}).runs_checked == 0);
}

TEST_CASE("hierarchy holds on every scenario trace") {
  for (const auto& entry : std::filesystem::directory_iterator(scenario_dir())) {
    if (entry.path().extension() != ".scenario") continue;
    CAPTURE(entry.path().filename().string());
    const auto cfg = load_scenario(entry.path());
    const auto r = run_scenario(cfg);
    std::set<std::string> parties;
    for (const auto& e : r.trace) parties.insert(e.actor);
    for (const auto& x : parties) {
      for (const auto& y : parties) {
        if (x == y) continue;
        const auto v = check_all_claims(r.trace, x, y);
        for (std::size_t k = 1; k < v.size(); ++k) CHECK((!v[k].holds || v[k - 1].holds));
      }
    }
  }
}

TEST_CASE("trace text round trip") {
  auto cfg = scenario("cc_cross_group");
  const auto r = run_scenario(cfg);
  std::stringstream ss;
  write_trace(ss, r.trace);
  const auto back = read_trace(ss);
  CHECK(back.size() == r.trace.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].kind == r.trace[i].kind);
    CHECK(back[i].payload == r.trace[i].payload);
    CHECK(back[i].time == doctest::Approx(r.trace[i].time));
    CHECK(format_event(back[i]) == format_event(r.trace[i]));
  }
  CHECK_THROWS_AS(parse_event("0.0\tSend\tC1"), Error);
  CHECK_THROWS_AS(parse_event("0.0\tBogus\tC1\tP1\tC1\tx\t01"), Error);
}

TEST_CASE("run data term round trip") {
  RunData d{Term::nonce("N0", NonceValue{}), n1(4), Digest{}, std::nullopt, "C7"};
  const auto back = RunData::from_term(d.to_term());
  REQUIRE(back.has_value());
  CHECK(back->to_term() == d.to_term());
  CHECK(back->customer == "C7");
  CHECK_FALSE(back->session.has_value());
  CHECK_FALSE(RunData::from_term(Term::atom("x")).has_value());
}
