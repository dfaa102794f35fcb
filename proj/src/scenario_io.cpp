#include "tap/scenario_io.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "tap/error.hpp"

namespace tap {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw Error(Errc::ConfigParse, what); }

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

std::vector<std::string> strings(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<std::string>>();
}

RetrievalMode parse_mode(int m) {
  if (m < 1 || m > 3) fail("mode must be 1, 2 or 3");
  return static_cast<RetrievalMode>(m);
}

IntruderRule parse_rule(const json& j) {
  IntruderRule r;
  if (j.contains("kind")) {
    const auto k = parse_msg_kind(j.at("kind").get<std::string>());
    if (!k) fail("unknown message kind in intruder rule");
    r.kind = k;
  }
  if (j.contains("from")) r.from = j.at("from").get<std::string>();
  if (j.contains("to")) r.to = j.at("to").get<std::string>();
  r.nth = get_or(j, "nth", 0);
  const auto action = j.at("action").get<std::string>();
  if (action == "block") {
    r.action = IntruderRule::Action::Block;
  } else if (action == "replay") {
    r.action = IntruderRule::Action::Replay;
  } else if (action == "redirect") {
    r.action = IntruderRule::Action::Redirect;
  } else {
    fail("unknown intruder action " + action);
  }
  r.target = get_or<std::string>(j, "target", "");
  if (r.action != IntruderRule::Action::Block && r.target.empty()) fail("replay/redirect needs a target");
  r.delay = get_or(j, "delay", 0.0);
  return r;
}

ScheduleItem parse_item(const json& j) {
  ScheduleItem s;
  s.at = j.at("at").get<double>();
  const auto action = j.at("action").get<std::string>();
  if (action == "broadcast") {
    s.action = ScheduleItem::Action::Broadcast;
  } else if (action == "join") {
    s.action = ScheduleItem::Action::Join;
  } else if (action == "switch") {
    s.action = ScheduleItem::Action::Switch;
  } else if (action == "cc") {
    s.action = ScheduleItem::Action::CC;
  } else {
    fail("unknown schedule action " + action);
  }
  s.customer = get_or<std::string>(j, "customer", "");
  s.provider = get_or<std::string>(j, "provider", "");
  s.peer = get_or<std::string>(j, "peer", "");
  s.phase = get_or<std::string>(j, "phase", "");
  s.tamper = get_or<std::string>(j, "tamper", "none");
  if (s.tamper != "none" && s.tamper != "initiator" && s.tamper != "responder") fail("bad tamper value");
  const auto sc = get_or<std::string>(j, "scenario", "SameP");
  if (sc == "SameP") {
    s.cc = CcScenario::SameP;
  } else if (sc == "SameGroup") {
    s.cc = CcScenario::SameGroup;
  } else if (sc == "CrossGroup") {
    s.cc = CcScenario::CrossGroup;
  } else {
    fail("unknown cc scenario " + sc);
  }
  if (s.action == ScheduleItem::Action::Broadcast && s.provider.empty()) fail("broadcast needs a provider");
  if ((s.action == ScheduleItem::Action::Join || s.action == ScheduleItem::Action::Switch) &&
      (s.customer.empty() || s.provider.empty())) {
    fail("join/switch needs customer and provider");
  }
  if (s.action == ScheduleItem::Action::CC && (s.customer.empty() || s.peer.empty())) fail("cc needs customer and peer");
  return s;
}

ScenarioConfig from_json(const json& j) {
  ScenarioConfig c;
  c.name = j.at("name").get<std::string>();
  c.seed = get_or<std::uint64_t>(j, "seed", 1);
  c.mode = parse_mode(get_or(j, "mode", 1));
  c.restricted = get_or(j, "restricted", false);
  c.latency = get_or(j, "latency", 1.0);
  c.timeout_rtts = get_or(j, "timeout_rtts", 2);
  c.chain_start = get_or(j, "chain_start", 0.0);
  c.max_events = get_or<std::size_t>(j, "max_events", 100000);
  if (c.latency <= 0) fail("latency must be positive");
  if (c.timeout_rtts < 1) fail("timeout_rtts must be >= 1");

  for (const auto& g : j.at("groups")) {
    GroupConfig gc;
    gc.me = g.at("me").get<std::string>();
    gc.providers = strings(g, "providers");
    gc.neighbors = strings(g, "neighbors");
    gc.chain_length = get_or<std::uint32_t>(g, "chain_length", 16);
    gc.duration = get_or<std::uint64_t>(g, "duration", 1600);
    gc.index = get_or<std::uint64_t>(g, "index", 0);
    gc.offset = get_or<std::uint64_t>(g, "offset", 0);
    c.groups.push_back(std::move(gc));
  }
  if (c.groups.empty()) fail("at least one group is required");

  for (const auto& cu : j.value("customers", json::array())) {
    CustomerConfig cc;
    cc.id = cu.at("id").get<std::string>();
    cc.profile = get_or<std::string>(cu, "profile", "standard");
    if (cu.contains("password")) cc.password = cu.at("password").get<std::string>();
    cc.auto_join = get_or(cu, "auto_join", true);
    cc.reconnect_on_limited = get_or(cu, "reconnect_on_limited", false);
    cc.alternates = strings(cu, "alternates");
    c.customers.push_back(std::move(cc));
  }

  for (const auto& l : j.value("limited", json::array())) {
    c.limited[l.at("provider").get<std::string>()].insert(l.at("tier").get<std::string>());
  }
  const json offsets = j.value("clock_offsets", json::object());
  for (const auto& [k, v] : offsets.items()) c.clock_offsets[k] = v.get<double>();
  for (const auto& b : j.value("blocked_links", json::array())) {
    const auto pair = b.get<std::vector<std::string>>();
    if (pair.size() != 2) fail("blocked link must name two parties");
    c.blocked_links.emplace_back(pair[0], pair[1]);
  }

  if (j.contains("intruder")) {
    const auto& z = j.at("intruder");
    c.intruder.present = true;
    c.intruder.reach_all = !z.contains("reach");
    for (const auto& r : strings(z, "reach")) c.intruder.reach.insert(r);
    c.intruder.relay = get_or(z, "relay", false);
    c.intruder.relay_delay = get_or(z, "relay_delay", 0.0);
    for (const auto& r : z.value("rules", json::array())) c.intruder.rules.push_back(parse_rule(r));
  }

  if (j.contains("conditions")) {
    const auto& k = j.at("conditions");
    MitmConditions m;
    m.customer = k.at("customer").get<std::string>();
    m.provider = k.at("provider").get<std::string>();
    m.c1 = get_or(k, "C1", true);
    m.c2 = get_or(k, "C2", true);
    m.c3 = get_or(k, "C3", true);
    m.c4 = get_or(k, "C4", true);
    m.c5 = get_or(k, "C5", m.c1 && m.c2 && m.c3 && m.c4);
    c.conditions = m;
  }

  for (const auto& s : j.value("schedule", json::array())) c.schedule.push_back(parse_item(s));

  if (j.contains("expect")) {
    const auto& e = j.at("expect");
    if (e.contains("verdict")) {
      const auto v = parse_attack_verdict(e.at("verdict").get<std::string>());
      if (!v) fail("unknown expected verdict");
      c.expect.verdict = v;
    }
    const json unicast = e.value("unicast", json::object());
    for (const auto& [k, v] : unicast.items()) c.expect.unicast[k] = v.get<std::uint64_t>();
    for (const auto& a : e.value("alerts", json::array())) {
      c.expect.alerts.push_back({a.at("actor").get<std::string>(), a.at("label").get<std::string>()});
    }
    for (const auto& a : e.value("claims", json::array())) {
      c.expect.claims.push_back(
          {a.at("claimant").get<std::string>(), a.at("partner").get<std::string>(), get_or(a, "holds", true)});
    }
    if (e.contains("cc_keys_equal")) c.expect.cc_keys_equal = e.at("cc_keys_equal").get<bool>();
  }

  if (c.conditions) apply_conditions(c);
  return c;
}

}  // namespace

std::string_view to_string(AttackVerdict v) {
  switch (v) {
    case AttackVerdict::NoAttack: return "NoAttack";
    case AttackVerdict::AttackFailed: return "AttackFailed";
    case AttackVerdict::AttackSucceeded: return "AttackSucceeded";
  }
  return "?";
}

std::optional<AttackVerdict> parse_attack_verdict(std::string_view s) {
  for (auto v : {AttackVerdict::NoAttack, AttackVerdict::AttackFailed, AttackVerdict::AttackSucceeded}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::string_view to_string(CcScenario s) {
  switch (s) {
    case CcScenario::SameP: return "SameP";
    case CcScenario::SameGroup: return "SameGroup";
    case CcScenario::CrossGroup: return "CrossGroup";
  }
  return "?";
}

ScenarioConfig parse_scenario(std::string_view json_text) {
  try {
    return from_json(json::parse(json_text));
  } catch (const json::exception& e) {
    fail(std::string("scenario: ") + e.what());
  }
}

ScenarioConfig load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail("cannot open scenario " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

void apply_conditions(ScenarioConfig& cfg) {
  if (!cfg.conditions) return;
  const auto& m = *cfg.conditions;
  const bool all = m.c1 && m.c2 && m.c3 && m.c4;
  if (m.c5 != all) fail("C5 must hold exactly when C1..C4 all hold");

  auto& z = cfg.intruder;
  if (z.reach_all) z.reach.clear();
  z.reach_all = false;
  z.present = true;
  z.relay = true;
  if (m.c1) {
    z.reach.insert(m.provider);
  } else {
    z.reach.erase(m.provider);
  }
  if (m.c3) {
    z.reach.insert(m.customer);
  } else {
    z.reach.erase(m.customer);
  }
  std::erase_if(cfg.blocked_links, [&](const auto& l) {
    return (l.first == m.customer && l.second == m.provider) || (l.first == m.provider && l.second == m.customer);
  });
  if (m.c2) cfg.blocked_links.emplace_back(m.customer, m.provider);
  z.relay_delay = m.c4 ? 0.0 : 20 * cfg.latency;
}

}  // namespace tap
