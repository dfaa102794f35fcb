// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>

#include <fmt/format.h>

#include "support.hpp"
#include "tap/counters.hpp"
#include "tap/error.hpp"
#include "tap/metrics.hpp"
#include "tap/simulator.hpp"
#include "tap/trace_checker.hpp"

using namespace tap;
using namespace tap::testing;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = true;
  std::vector<std::string> failures;
  std::string summary;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failures.push_back(what);
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool has_alert(const Trace& t, const std::string& actor, const std::string& label) {
  return std::any_of(t.begin(), t.end(), [&](const TraceEvent& e) {
    return e.kind == EventKind::Alert && e.actor == actor && e.label == label;
  });
}

const PhaseReport* find_phase(const RunReport& r, const std::string& name) {
  for (const auto& p : r.phases)
    if (p.name == name) return &p;
  return nullptr;
}

// 1. Unicast message counts of honest runs.
Outcome message_complexity() {
  Outcome o;
  const std::vector<std::tuple<std::string, std::string, std::uint64_t>> rows = {
      {"honest_ia", "IA", 5}, {"honest_ra1", "RA1", 3}, {"honest_ra2", "RA2", 5}};
  double slowest = 0;
  std::vector<std::string> got;
  for (const auto& [name, phase, want] : rows) {
    const auto t0 = Clock::now();
    const auto cfg = scenario(name);
    const auto report = build_report(cfg, run_scenario(cfg));
    const double dt = seconds_since(t0);
    slowest = std::max(slowest, dt);
    o.expect(dt < 1.0, fmt::format("{} took {:.3f} s", name, dt));
    const auto* p = find_phase(report, phase);
    if (p == nullptr) {
      o.expect(false, fmt::format("{}: no {} phase", name, phase));
      continue;
    }
    got.push_back(fmt::format("{}={}", phase, p->metrics.unicast_msgs));
    o.expect(p->metrics.unicast_msgs == want, fmt::format("{} unicast {} != {}", phase, p->metrics.unicast_msgs, want));
    if (phase == "RA2") {
      const bool noted = !p->unicast_match && !p->notes.empty() && p->reference && p->reference->unicast == 4;
      o.expect(noted, "RA2 discrepancy against the reference row not recorded");
    }
  }
  o.summary = fmt::format("unicast {}, RA2 reference-row note present, slowest scenario {:.3f} s",
                          fmt::join(got, " "), slowest);
  return o;
}

// 2. Replay attacks are detected at the final message.
Outcome replay_regression() {
  Outcome o;
  const std::vector<std::tuple<std::string, std::string, std::string>> rows = {
      {"replay_ia", "P2", "M6"}, {"replay_ra1", "P3", "M3"}, {"replay_ra2", "P5", "M5"}};
  for (const auto& [name, actor, label] : rows) {
    const auto r = run_scenario(scenario(name));
    o.expect(r.verdict == AttackVerdict::AttackFailed, fmt::format("{}: verdict {}", name, to_string(r.verdict)));
    o.expect(has_alert(r.trace, actor, label), fmt::format("{}: no {} alert at {}", name, label, actor));
  }
  o.summary = "3 replay scenarios AttackFailed with alerts M6/M3/M5";
  return o;
}

// 3. Conditional man-in-the-middle.
Outcome conditional_mitm() {
  Outcome o;
  const std::vector<std::pair<std::string, AttackVerdict>> rows = {
      {"mitm_all_conditions", AttackVerdict::AttackSucceeded},
      {"mitm_no_provider_reach", AttackVerdict::AttackFailed},
      {"mitm_direct_link", AttackVerdict::AttackFailed},
      {"mitm_no_customer_reach", AttackVerdict::AttackFailed},
      {"mitm_slow_relay", AttackVerdict::AttackFailed}};
  for (const auto& [name, want] : rows) {
    const auto r = run_scenario(scenario(name));
    o.expect(r.verdict == want, fmt::format("{}: verdict {}", name, to_string(r.verdict)));
    if (want == AttackVerdict::AttackSucceeded) {
      o.expect(!check_precedes(r.trace).holds, name + ": precedes still holds");
    }
  }
  o.summary = "all conditions: AttackSucceeded; each single condition off: AttackFailed";
  return o;
}

// 4. Claim suite.
Outcome claim_suite() {
  Outcome o;
  std::vector<std::string> counts;
  for (const char* name : {"honest_ia", "honest_ra1", "honest_ra2"}) {
    auto cfg = scenario(name);
    cfg.restricted = true;
    const auto r = run_scenario(cfg);
    int held = 0, total = 0;
    for (const auto& c : cfg.expect.claims) {
      for (const auto& v : check_all_claims(r.trace, c.claimant, c.partner)) {
        ++total;
        held += v.holds && v.runs_checked > 0 ? 1 : 0;
      }
    }
    o.expect(total == 12 && held == 12, fmt::format("{}: {}/{} claims hold", name, held, total));
    counts.push_back(fmt::format("{}/{}", held, total));
  }
  auto cfg = scenario("mitm_all_conditions");
  cfg.restricted = false;
  const auto r = run_scenario(cfg);
  bool any_fails = false;
  for (const auto& c : cfg.expect.claims) {
    for (const auto& v : check_all_claims(r.trace, c.claimant, c.partner)) any_fails = any_fails || !v.holds;
  }
  o.expect(any_fails, "no claim fails under the man-in-the-middle");
  o.summary = fmt::format("restricted IA/RA1/RA2 claims {}; man-in-the-middle breaks at least one", fmt::join(counts, ", "));
  return o;
}

// 5. Keychain agreement and retrieval.
Outcome keychain_agreement() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(0x5eed);
  const std::uint32_t lengths[] = {4, 16, 64};
  std::size_t tickets = 0;
  for (int n = 0; n < 100; ++n) {
    const std::uint32_t len = lengths[n % 3];
    const auto table = random_table(rng, 1 + rng() % 16);
    const auto msg = random_msg(rng, len);
    // Issuer, provider and neighbouring ME each derive the chain on their own.
    std::vector<KeyChain> chains;
    for (int party = 0; party < 3; ++party) chains.push_back(build_keychain(SecretTable{table}, KeyMsg{msg}));
    for (int party = 1; party < 3; ++party) {
      o.expect(chains[party].export_blob() == chains[0].export_blob() &&
                   chains[party].index_vector() == chains[0].index_vector(),
               fmt::format("fixture {}: party {} chain differs", n, party));
    }
    const auto tree = build_index_tree(chains[0].index_vector());
    const Key group_key = random_key(rng, KeyKind::Group);
    const Key kc = random_key(rng);
    const Seconds ilen = chains[0].interval_len();
    for (std::uint32_t i = 0; i < len; ++i) {
      for (auto mode : {RetrievalMode::Mode1, RetrievalMode::Mode2, RetrievalMode::Mode3}) {
        const auto& issuer = chains[0];
        TicketRequest req;
        req.mode = mode;
        req.customer = Term::id("C1");
        req.session = derive_session_key(issuer.keys()[i], kc, i, len);
        req.interval = i;
        req.index_value = issuer.index_vector()[i];
        req.profile = Term::atom("standard");
        req.customer_key_digest = hash(kc.view());
        req.generator_digest = Digest::from(xor_combine(issuer.keys()[i].view(), issuer.nonce()));
        req.issued_at = i * ilen + 0.25 * ilen;
        req.tree = &tree;
        const auto ticket = issue_ticket(req, issuer.keys()[i], group_key);
        for (int party = 1; party < 3; ++party) {
          auto est = DriftEstimator::initial(0, 0, static_cast<Seconds>(msg.duration), 0);
          const auto local_tree = build_index_tree(chains[party].index_vector());
          try {
            const auto vt = verify_ticket(ticket, chains[party], local_tree, group_key, est, *req.issued_at + 1);
            o.expect(vt.index == i, fmt::format("fixture {} mode {} interval {}: got {}", n, static_cast<int>(mode), i,
                                                vt.index));
          } catch (const Error& e) {
            o.expect(false, fmt::format("fixture {} mode {} interval {}: {}", n, static_cast<int>(mode), i, e.what()));
          }
          ++tickets;
        }
      }
    }
  }
  const double dt = seconds_since(t0);
  o.expect(dt < 30.0, fmt::format("property run took {:.2f} s", dt));
  o.summary = fmt::format("100 fixtures, 3 parties, {} ticket verifications, {:.2f} s", tickets, dt);
  return o;
}

// 6. Tree retrieval cost.
Outcome tree_cost() {
  Outcome o;
  std::mt19937_64 rng(6);
  std::vector<std::string> seen;
  for (std::uint32_t leaves : {8u, 16u, 64u}) {
    const std::uint32_t len = leaves - 1;
    const auto chain = build_keychain(random_table(rng), random_msg(rng, len));
    const auto tree = build_index_tree(chain.index_vector());
    const auto want = static_cast<std::uint64_t>(std::ceil(std::log2(static_cast<double>(leaves))));
    std::uint64_t worst = 0;
    for (std::size_t i = 0; i <= len; ++i) {
      const auto path = sibling_path(tree, i);
      OpCounts c;
      std::size_t got = 0;
      {
        counters::Scope s(c);
        got = retrieve_mode3(chain.index_vector()[i], path, tree.head(), tree);
      }
      o.expect(got == i, fmt::format("L+1={} leaf {}: retrieved {}", leaves, i, got));
      o.expect(c.hash == want && c.retrieval_hash == want,
               fmt::format("L+1={} leaf {}: {} hashes, expected {}", leaves, i, c.hash, want));
      worst = std::max(worst, c.hash);
    }
    seen.push_back(fmt::format("{}:{}", leaves, worst));
  }
  o.summary = fmt::format("hashes per retrieval (L+1:count) {}", fmt::join(seen, " "));
  return o;
}

// 7. Windowed retrieval under a constant clock offset.
Outcome drift_convergence() {
  Outcome o;
  std::mt19937_64 rng(7);
  const std::uint32_t len = 32;
  auto msg = random_msg(rng, len);
  msg.duration = 3200;
  const auto chain = build_keychain(random_table(rng), msg);
  const auto tree = build_index_tree(chain.index_vector());
  const Key group_key = random_key(rng, KeyKind::Group);
  const Key kc = random_key(rng);
  const Seconds ilen = chain.interval_len();
  const Seconds delta = 0.3 * ilen;  // issuer clock ahead of the verifier
  const Seconds eps0 = 0.5 * ilen;
  DriftEstimator est{eps0, static_cast<Seconds>(msg.duration), 0, 0};
  double prev_gap = std::abs(est.epsilon - delta);
  std::vector<std::string> trail;
  for (std::uint32_t k = 0; k < 20; ++k) {
    const Seconds t = k * ilen;  // ticket issued at the interval start
    TicketRequest req;
    req.mode = RetrievalMode::Mode2;
    req.customer = Term::id("C1");
    req.session = derive_session_key(chain.keys()[k], kc, k, len);
    req.interval = k;
    req.index_value = chain.index_vector()[k];
    req.profile = Term::atom("standard");
    req.customer_key_digest = hash(kc.view());
    req.generator_digest = Digest::from(xor_combine(chain.keys()[k].view(), chain.nonce()));
    req.issued_at = t + delta;
    const auto ticket = issue_ticket(req, chain.keys()[k], group_key);
    try {
      const auto vt = verify_ticket(ticket, chain, tree, group_key, est, t + 2.0);
      o.expect(vt.index == k, fmt::format("retrieval {} returned {}", k, vt.index));
    } catch (const Error& e) {
      o.expect(false, fmt::format("retrieval {}: {}", k, e.what()));
      break;
    }
    const double gap = std::abs(est.epsilon - delta);
    o.expect(gap <= prev_gap + 1e-12, fmt::format("retrieval {}: |eps - delta| grew {} -> {}", k, prev_gap, gap));
    prev_gap = gap;
    if (k % 5 == 4) trail.push_back(fmt::format("{:.2f}", gap));
  }
  o.summary = fmt::format("20 retrievals at delta={:.0f}s eps0={:.0f}s, |eps-delta| every 5th: {}", delta, eps0,
                          fmt::join(trail, " "));
  return o;
}

// 8. Passive intruder learns no secret.
Outcome intruder_opacity() {
  Outcome o;
  const std::vector<std::string> honest = {"honest_ia",        "honest_ra1",      "honest_ra2",
                                           "cc_same_provider", "cc_same_group",   "cc_cross_group",
                                           "limited_reconnect", "registered_customer"};
  std::size_t secrets = 0, terms = 0, leaks = 0;
  for (int n = 0; n < 50; ++n) {
    auto cfg = scenario(honest[n % honest.size()]);
    cfg.seed = 1000 + static_cast<std::uint64_t>(n);
    cfg.intruder = IntruderConfig{};
    cfg.intruder.present = true;  // hears every transmission, acts on none
    NetworkSim sim(cfg);
    sim.run();
    const auto& k = *sim.intruder();
    const std::size_t bound = sim.max_honest_depth() + 1;
    Knowledge bounded(&sim.registry(), bound);
    bounded.add_all(std::vector<Term>(k.terms().begin(), k.terms().end()));
    o.expect(deduce_closure(k.terms(), &sim.registry()) == k.terms(), cfg.name + ": closure not at fixpoint");
    o.expect(k.max_depth() <= bound, fmt::format("{}: closure depth {} beyond bound {}", cfg.name, k.max_depth(), bound));
    for (const auto& s : sim.secrets()) {
      ++secrets;
      if (bounded.derivable(s)) {
        ++leaks;
        o.expect(false, fmt::format("{} seed {}: secret {} derivable", cfg.name, cfg.seed, render(s)));
      }
    }
    terms += k.size();
  }
  o.summary = fmt::format("50 runs, {} secrets checked against {} closure terms, {} leaks", secrets, terms, leaks);
  return o;
}

// 9. Customer-to-customer key agreement.
Outcome cc_agreement() {
  Outcome o;
  int equal = 0, broken = 0;
  for (const char* name : {"cc_same_provider", "cc_same_group", "cc_cross_group"}) {
    for (const std::string tamper : {"none", "initiator", "responder"}) {
      auto cfg = scenario(name);
      for (auto& item : cfg.schedule)
        if (item.action == ScheduleItem::Action::CC) item.tamper = tamper;
      const auto r = run_scenario(cfg);
      const auto it = r.cc.find("CC");
      if (it == r.cc.end()) {
        o.expect(false, fmt::format("{} ({}): no exchange recorded", name, tamper));
        continue;
      }
      const auto& cc = it->second;
      const bool keys_equal = cc.initiator_key && cc.responder_key && *cc.initiator_key == *cc.responder_key;
      if (tamper == "none") {
        o.expect(keys_equal && cc.authenticated && !cc.alert, fmt::format("{}: keys differ or confirm failed", name));
        equal += keys_equal ? 1 : 0;
      } else {
        const bool ok = !keys_equal && !cc.authenticated && cc.alert;
        o.expect(ok, fmt::format("{} ({} tampered): confirm not rejected", name, tamper));
        broken += ok ? 1 : 0;
      }
    }
  }
  o.summary = fmt::format("equal K_ij in {}/3 scenarios; tampered partial key rejects the confirm in {}/6", equal, broken);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"message complexity", message_complexity}, {"replay detection", replay_regression},
      {"conditional man-in-the-middle", conditional_mitm}, {"claim suite", claim_suite},
      {"keychain agreement", keychain_agreement}, {"tree retrieval cost", tree_cost},
      {"windowed retrieval drift", drift_convergence}, {"intruder opacity", intruder_opacity},
      {"customer-to-customer key", cc_agreement}};
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.ok = false;
      o.failures.push_back(std::string("exception: ") + e.what());
    }
    std::cout << fmt::format("criterion {} {:<30} {}  {}\n", k + 1, criteria[k].first, o.ok ? "PASS" : "FAIL",
                             o.summary);
    for (std::size_t f = 0; f < o.failures.size() && f < 5; ++f) std::cout << "    " << o.failures[f] << '\n';
    failed += o.ok ? 0 : 1;
  }
  std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
