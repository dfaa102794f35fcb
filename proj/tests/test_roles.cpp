#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "tap/error.hpp"
#include "tap/simulator.hpp"

using namespace tap;
using namespace tap::testing;

namespace {

NetworkSim fresh(const std::string& name, bool restricted) {
  auto cfg = scenario(name);
  cfg.restricted = restricted;
  cfg.schedule.clear();
  return NetworkSim(cfg);
}

std::vector<ProtocolMessage> sent(const StepResult& r, MsgKind k) {
  std::vector<ProtocolMessage> out;
  for (const auto& m : r.out)
    if (m.kind == k) out.push_back(m);
  return out;
}

std::vector<TraceEvent> signals(const StepResult& r, EventKind k) {
  std::vector<TraceEvent> out;
  for (const auto& e : r.events)
    if (e.kind == k) out.push_back(e);
  return out;
}

ProtocolMessage forward(const ProtocolMessage& req, const std::string& me) {
  return {MsgKind::JoinFwd, req.to, me, req.body, req.to};
}

// C after hearing P1's broadcast, with auto-join suppressed.
PartyState listening(const NetworkSim& sim, const std::string& c = "C1") {
  auto st = sim.party(c);
  st.c().auto_join = false;
  const auto b = broadcast_pk(sim.party("P1"), 0).out.at(0);
  return step(st, b, 1).state;
}

Term nonce(std::uint8_t b) {
  NonceValue v{};
  v.fill(b);
  return Term::nonce("N0", v);
}

// Sends a join for C1 through P1 and returns the ME state after granting it.
StepResult grant(PartyState me, const ProtocolMessage& join, Seconds at) {
  auto r = step(std::move(me), forward(join, "ME1"), at);
  const Seconds flush = at + r.state.config.latency;
  return tick(std::move(r.state), flush);
}

}  // namespace

TEST_CASE("broadcast triggers a sealed join request") {
  auto sim = fresh("honest_ia", true);
  const auto b = broadcast_pk(sim.party("P1"), 0);
  REQUIRE(b.out.size() == 1);
  CHECK(b.out[0].to == kBroadcastAddress);
  const auto r = step(sim.party("C1"), b.out[0], 1);
  const auto joins = sent(r, MsgKind::JoinReq);
  REQUIRE(joins.size() == 1);
  CHECK(joins[0].to == "P1");
  CHECK(joins[0].body.is(Term::Tag::Sealed));
  CHECK(r.state.c().run.has_value());
  CHECK(r.wakeups.size() == 1);
  // A second broadcast does not start another run.
  CHECK(step(r.state, b.out[0], 2).out.empty());
}

TEST_CASE("missing preconditions raise") {
  auto sim = fresh("honest_ia", true);
  try {
    start_join(sim.party("C1"), "P1", 0);
    FAIL("expected NoBroadcastSeen");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoBroadcastSeen);
  }
  try {
    start_switch(sim.party("C1"), "P1", 0);
    FAIL("expected NoTicket");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoTicket);
  }
  CHECK_THROWS_AS(recover_lost(sim.party("C1"), RecoverVariant::Join, 0), Error);
  CHECK_THROWS_AS(start_cc(sim.party("C1"), "C2", 0), Error);
}

TEST_CASE("ME grants known customers only") {
  auto sim = fresh("honest_ia", false);
  const auto c = listening(sim);
  const auto join = start_join(c, "P1", 2, nonce(1)).out.at(0);
  const auto g = me_grant(sim.party("ME1"), forward(join, "ME1"), 3);
  const auto grants = sent(g, MsgKind::TicketGrant);
  REQUIRE(grants.size() == 1);
  CHECK(grants[0].to == "P1");
  CHECK(signals(g, EventKind::Conf).size() == 1);

  const Key pub = sim.party("P1").p().me_public;
  const Term stranger = seal(pub, Term::cat({Term::id("C9"), nonce(2)}));
  const auto none = me_grant(sim.party("ME1"), {MsgKind::JoinFwd, "P1", "ME1", stranger, "P1"}, 3);
  CHECK(none.out.empty());
  CHECK(none.events.empty());
}

TEST_CASE("two joins in one batch both get tickets and raise an alert") {
  auto sim = fresh("honest_ia", false);
  const auto c = listening(sim);
  const auto a = start_join(c, "P1", 2, nonce(1)).out.at(0);
  const auto b = start_join(c, "P1", 2, nonce(2)).out.at(0);
  auto me = step(sim.party("ME1"), forward(a, "ME1"), 3).state;
  me = step(me, forward(b, "ME1"), 3.5).state;
  const auto r = tick(me, 4);
  const auto grants = sent(r, MsgKind::TicketGrant);
  REQUIRE(grants.size() == 2);
  CHECK(grants[0].body != grants[1].body);
  const auto confs = signals(r, EventKind::Conf);
  REQUIRE(confs.size() == 2);
  const auto n1a = RunData::from_term(confs[0].payload)->n1;
  const auto n1b = RunData::from_term(confs[1].payload)->n1;
  CHECK(n1a != n1b);
  const auto alerts = signals(r, EventKind::Alert);
  CHECK(alerts.size() == 2);
  for (const auto& al : alerts) CHECK(al.label == "M4");

  // The restricted variant grants only the first.
  auto rs = fresh("honest_ia", true);
  const auto c2 = listening(rs);
  auto me2 = step(rs.party("ME1"), forward(start_join(c2, "P1", 2, nonce(1)).out.at(0), "ME1"), 3).state;
  me2 = step(me2, forward(start_join(c2, "P1", 2, nonce(2)).out.at(0), "ME1"), 3.5).state;
  CHECK(sent(tick(me2, 4), MsgKind::TicketGrant).size() == 1);
}

TEST_CASE("a resend is linked, a replay is flagged") {
  auto sim = fresh("honest_ia", false);
  auto c = start_join(listening(sim), "P1", 2, nonce(1));
  const auto first = c.out.at(0);
  auto g = grant(sim.party("ME1"), first, 3);
  REQUIRE(sent(g, MsgKind::TicketGrant).size() == 1);
  CHECK(signals(g, EventKind::Alert).empty());

  const auto resend = recover_lost(c.state, RecoverVariant::Join, 10).out.at(0);
  CHECK(resend.kind == MsgKind::ResendJoin);
  auto g2 = grant(g.state, resend, 11);
  CHECK(sent(g2, MsgKind::TicketGrant).size() == 1);
  CHECK(signals(g2, EventKind::Alert).empty());

  auto g3 = grant(g2.state, first, 14);
  const auto alerts = signals(g3, EventKind::Alert);
  REQUIRE_FALSE(alerts.empty());
  CHECK(alerts[0].label == "M4");
}

TEST_CASE("registered customers prove the password") {
  auto sim = fresh("registered_customer", false);
  const auto c = listening(sim);
  const auto wrong = start_join(c, "P1", 2, nonce(9)).out.at(0);
  const auto r = step(sim.party("ME1"), forward(wrong, "ME1"), 3);
  const auto alerts = signals(r, EventKind::Alert);
  REQUIRE(alerts.size() == 1);
  CHECK(alerts[0].label == "M2");
  CHECK_FALSE(r.state.me().batch_deadline.has_value());

  const auto right = start_join(c, "P1", 2).out.at(0);
  CHECK(sent(grant(sim.party("ME1"), right, 3), MsgKind::TicketGrant).size() == 1);
}

TEST_CASE("switch requests") {
  auto cfg = scenario("honest_ia");
  cfg.restricted = false;
  NetworkSim sim(cfg);
  sim.run();
  const auto c = sim.party("C1");
  REQUIRE(c.c().ticket.has_value());

  const auto req = start_switch(c, "P2", 50);
  const auto sw = req.out.at(0);
  CHECK(sw.kind == MsgKind::SwitchReq);

  const auto first = step(sim.party("P2"), sw, 51);
  const auto challenges = sent(first, MsgKind::SwitchChallenge);
  REQUIRE(challenges.size() == 1);

  SUBCASE("duplicate request is an alert") {
    const auto second = step(first.state, sw, 52);
    const auto alerts = signals(second, EventKind::Alert);
    REQUIRE(alerts.size() == 1);
    CHECK(alerts[0].label == "M1");
    CHECK(second.out.empty());
  }

  SUBCASE("challenge answers the right nonce only") {
    const auto ok = step(req.state, challenges[0], 52);
    CHECK(sent(ok, MsgKind::ChallengeResp).size() == 1);
    CHECK(signals(ok, EventKind::Conf).size() == 1);

    // A second switch run has a different N0, so N0+1 does not match.
    const auto other = start_switch(req.state, "P2", 50).state;
    const auto bad = step(other, challenges[0], 52);
    CHECK(bad.out.empty());
    CHECK(signals(bad, EventKind::Conf).empty());
  }

  SUBCASE("wrong response halts service") {
    auto p = first.state;
    const Term junk = seal(Key{}, Term::atom("x"));
    const auto r = step(p, {MsgKind::ChallengeResp, "C1", "P2", junk, "C1"}, 52);
    const auto alerts = signals(r, EventKind::Alert);
    REQUIRE(alerts.size() == 1);
    CHECK(alerts[0].label == "M3");
    CHECK(signals(r, EventKind::ServiceHalt).size() == 1);
  }

  SUBCASE("timeout fails the pending run") {
    const auto r = tick(first.state, 51 + cfg.latency * 8);
    CHECK(signals(r, EventKind::Alert).size() == 1);
    CHECK(tick(first.state, 52).events.empty());
  }
}

TEST_CASE("transitions are deterministic") {
  auto sim = fresh("honest_ia", false);
  const auto c = listening(sim);
  const auto a = start_join(c, "P1", 2);
  const auto b = start_join(c, "P1", 2);
  CHECK(a.out.at(0).body == b.out.at(0).body);
  const auto ga = me_grant(sim.party("ME1"), forward(a.out.at(0), "ME1"), 3);
  const auto gb = me_grant(sim.party("ME1"), forward(b.out.at(0), "ME1"), 3);
  REQUIRE(ga.out.size() == gb.out.size());
  for (std::size_t i = 0; i < ga.out.size(); ++i) CHECK(ga.out[i].body == gb.out[i].body);
  CHECK(ga.events == gb.events);
}

TEST_CASE("pairwise key matches the oracle") {
  const auto v = oracle_vectors()["cc"];
  const auto n0b = hex(v["n0"]), n1b = hex(v["n1"]);
  NonceValue n0{}, n1{};
  std::copy(n0b.begin(), n0b.end(), n0.begin());
  std::copy(n1b.begin(), n1b.end(), n1.begin());
  const Key k = cc_session_key(hex(v["partial_i"]), hex(v["partial_j"]), Term::nonce("N0", n0), Term::nonce("N1", n1));
  CHECK(to_hex(k.view()) == v["kij"].get<std::string>());
}

TEST_CASE("role helpers") {
  CHECK(profile_tier(Term::atom("basic")) == "basic");
  CHECK(profile_tier(Term::cat({Term::atom("gold"), Term::num(1)})) == "gold");
  CHECK(profile_tier(Term::num(1)).empty());
  CHECK(password_nonce("pw") == password_nonce("pw"));
  CHECK(password_nonce("pw") != password_nonce("px"));
  CHECK(final_step(RunKind::IA) == "M6");
  CHECK(final_step(RunKind::RA1) == "M3");
  CHECK(final_step(RunKind::RA2) == "M5");
  for (int k = 0; k < 20; ++k) {
    const auto kind = static_cast<MsgKind>(k);
    CHECK(parse_msg_kind(to_string(kind)) == kind);
  }
  CHECK_FALSE(parse_msg_kind("Nope").has_value());
  ProtocolConfig pc;
  pc.latency = 1;
  CHECK(pc.timeout() == 8);
}
