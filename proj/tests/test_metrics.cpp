#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "tap/metrics.hpp"

using namespace tap;
using namespace tap::testing;

namespace {

RunReport report(const std::string& name) {
  const auto cfg = scenario(name);
  return build_report(cfg, run_scenario(cfg));
}

const PhaseReport& phase(const RunReport& r, const std::string& name) {
  for (const auto& p : r.phases)
    if (p.name == name) return p;
  FAIL("missing phase " << name);
  return r.phases.front();
}

}  // namespace

TEST_CASE("reference rows") {
  const auto ia = reference_row("IA"), ra1 = reference_row("RA1"), ra2 = reference_row("RA2");
  REQUIRE(ia);
  REQUIRE(ra1);
  REQUIRE(ra2);
  CHECK(ia->hash == 3);
  CHECK(ia->unicast == 5);
  CHECK(ra1->hash == 1);
  CHECK(ra1->unicast == 3);
  CHECK(ra2->hash == 4);
  CHECK(ra2->unicast == 4);
  CHECK_FALSE(reference_row("CC").has_value());
}

TEST_CASE("unicast counts per phase") {
  CHECK(phase(report("honest_ia"), "IA").metrics.unicast_msgs == 5);
  CHECK(phase(report("honest_ra1"), "RA1").metrics.unicast_msgs == 3);
  const auto r = report("honest_ra2");
  const auto& ra2 = phase(r, "RA2");
  CHECK(ra2.metrics.unicast_msgs == 5);
  CHECK_FALSE(ra2.unicast_match);
  const bool noted = std::any_of(ra2.notes.begin(), ra2.notes.end(),
                                 [](const std::string& n) { return n.find("five transmissions") != std::string::npos; });
  CHECK(noted);
  CHECK(r.ok());
}

TEST_CASE("no modular exponentiation anywhere") {
  for (const auto& entry : std::filesystem::directory_iterator(scenario_dir())) {
    if (entry.path().extension() != ".scenario") continue;
    const auto cfg = load_scenario(entry.path());
    const auto r = run_scenario(cfg);
    for (const auto& [id, o] : r.ops) CHECK(o.modexp == 0);
    for (const auto& [id, o] : r.precompute) CHECK(o.modexp == 0);
  }
}

TEST_CASE("phase metrics add up to the whole run") {
  const auto cfg = scenario("honest_ra2");
  const auto result = run_scenario(cfg);
  const auto r = build_report(cfg, result);
  OpCounts phases;
  std::uint64_t unicast = 0, broadcast = 0;
  for (const auto& p : r.phases) {
    phases += p.metrics.ops;
    unicast += p.metrics.unicast_msgs;
    broadcast += p.metrics.broadcast_msgs;
  }
  OpCounts total;
  for (const auto& [id, o] : result.ops) total += o;
  // Phases start at the first mark; nothing runs before it.
  CHECK(phases == total);
  const auto whole = count_run(result.trace);
  CHECK(unicast == whole.unicast_msgs);
  CHECK(broadcast == whole.broadcast_msgs);
}

TEST_CASE("intruder transmissions are not counted") {
  Trace t(3);
  t[0].kind = EventKind::Send;
  t[0].actor = "C1";
  t[0].peer = "P1";
  t[1].kind = EventKind::Send;
  t[1].actor = kIntruderId;
  t[1].peer = "P2";
  t[2].kind = EventKind::Send;
  t[2].actor = "P1";
  t[2].peer = kBroadcastAddress;
  const auto m = count_run(t);
  CHECK(m.unicast_msgs == 1);
  CHECK(m.broadcast_msgs == 1);
  CHECK_FALSE(m.per_party.contains(kIntruderId));
}

TEST_CASE("report json") {
  const auto r = report("cc_cross_group");
  const auto j = report_json(r);
  CHECK(j["schema"] == kReportSchema);
  CHECK(j["scenario"] == "cc_cross_group");
  CHECK(j["ok"] == true);
  CHECK(j["cc"]["CC"]["keys_equal"] == true);
  CHECK(j["phases"].is_array());
  CHECK(j["checks"].is_array());
  for (const auto& p : j["phases"]) {
    CHECK(p["metrics"].contains("hash"));
    CHECK(p["metrics"].contains("unicast"));
  }
  const auto text = format_report(r);
  CHECK(text.find("cc_cross_group") != std::string::npos);
}

TEST_CASE("a failed expectation makes the report not ok") {
  auto cfg = scenario("honest_ia");
  cfg.expect.unicast["IA"] = 4;
  CHECK_FALSE(build_report(cfg, run_scenario(cfg)).ok());
  cfg = scenario("mitm_all_conditions");
  cfg.expect.verdict = AttackVerdict::NoAttack;
  CHECK_FALSE(build_report(cfg, run_scenario(cfg)).ok());
}
