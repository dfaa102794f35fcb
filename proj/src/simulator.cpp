#include "tap/simulator.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "tap/error.hpp"
#include "tap/trace_checker.hpp"

namespace tap {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <std::size_t N>
std::array<std::uint8_t, N> random_bytes(std::mt19937_64& rng) {
  std::array<std::uint8_t, N> out{};
  for (std::size_t i = 0; i < N; i += 8) {
    auto v = rng();
    for (std::size_t j = 0; j < 8 && i + j < N; ++j) out[i + j] = static_cast<std::uint8_t>(v >> (8 * j));
  }
  return out;
}

Key random_key(std::mt19937_64& rng, KeyKind kind) { return Key::from(random_bytes<kDigestSize>(rng), kind); }

SecretTable seeded_table(std::mt19937_64& rng) {
  SecretTable t;
  for (int i = 0; i < 16; ++i) t.entries.push_back(random_bytes<kDigestSize>(rng));
  return t;
}

Digest id_hash(const std::string& id) {
  return digest_uncounted(ByteView(reinterpret_cast<const std::uint8_t*>(id.data()), id.size()));
}

Seconds offset_of(const ScenarioConfig& cfg, const std::string& id) {
  auto it = cfg.clock_offsets.find(id);
  return it == cfg.clock_offsets.end() ? 0.0 : it->second;
}

struct GroupMaterial {
  GroupConfig cfg;
  KeyMsg msg;
  Key group_key;
  Key public_key;
  Key private_key;
};

}  // namespace

NetworkSim::NetworkSim(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.conditions) apply_conditions(cfg_);
  bootstrap();
  for (const auto& item : cfg_.schedule) schedule(item);
}

void NetworkSim::bootstrap() {
  registry_ = std::make_shared<KeyRegistry>();
  std::mt19937_64 master(cfg_.seed);
  const SecretTable table = seeded_table(master);
  const ProtocolConfig pcfg{cfg_.latency, cfg_.timeout_rtts, cfg_.restricted};

  auto new_party = [&](Role role, const std::string& id) -> PartyState& {
    if (id.empty() || id == kIntruderId || id == kBroadcastAddress) {
      throw Error(Errc::ConfigParse, "invalid party id '" + id + "'");
    }
    if (parties_.contains(id)) throw Error(Errc::ConfigParse, "duplicate party id " + id);
    PartyState s;
    s.role = role;
    s.id = id;
    s.clock_offset = offset_of(cfg_, id);
    s.config = pcfg;
    s.registry = registry_;
    s.rng.seed(cfg_.seed ^ fnv1a(id));
    ops_[id];
    precompute_[id];
    return parties_.emplace(id, std::move(s)).first->second;
  };

  std::map<std::string, GroupMaterial> groups;
  for (const auto& g : cfg_.groups) {
    GroupMaterial m;
    m.cfg = g;
    m.public_key = random_key(master, KeyKind::PublicPair);
    m.private_key = random_key(master, KeyKind::PublicPair);
    m.group_key = random_key(master, KeyKind::Group);
    registry_->register_pair(m.public_key, m.private_key);
    m.msg.index = g.index;
    m.msg.offset = g.offset;
    m.msg.duration = g.duration;
    m.msg.length = g.chain_length;
    m.msg.nonce = random_bytes<16>(master);
    m.msg.mode = cfg_.mode;
    m.msg.sender_clock = cfg_.chain_start + offset_of(cfg_, g.me);
    try {
      m.msg.validate();
    } catch (const Error& e) {
      throw Error(Errc::ConfigParse, "group " + g.me + ": " + e.what(), e.code());
    }
    if (!groups.emplace(g.me, std::move(m)).second) throw Error(Errc::ConfigParse, "duplicate group " + g.me);
    for (const auto& p : g.providers) provider_group_[p] = g.me;
  }
  for (const auto& g : cfg_.groups) {
    for (const auto& n : g.neighbors) {
      if (!groups.contains(n)) throw Error(Errc::ConfigParse, "unknown neighbour " + n + " of " + g.me);
      if (n == g.me) continue;
      neighbors_[g.me].insert(n);
      neighbors_[n].insert(g.me);
    }
  }

  // Each member derives its own chain on Key_MSG receipt; the work is
  // charged to the member's precompute counters.
  auto make_view = [&](const GroupMaterial& g, const std::string& holder) {
    counters::Scope scope(precompute_[holder]);
    ChainView v;
    v.me = g.cfg.me;
    v.me_hash = id_hash(g.cfg.me);
    v.group_key = g.group_key;
    v.chain = std::make_shared<const KeyChain>(build_keychain(table, g.msg));
    v.tree = std::make_shared<const IndexTree>(build_index_tree(v.chain->index_vector()));
    v.mode = cfg_.mode;
    v.chain_start_local = cfg_.chain_start + offset_of(cfg_, holder);
    v.drift = DriftEstimator::initial(v.chain_start_local, g.msg.sender_clock, static_cast<Seconds>(g.cfg.duration),
                                      v.chain_start_local);
    return v;
  };

  std::map<std::string, CustomerRecord> records;
  std::map<std::string, Key> customer_keys;
  for (const auto& c : cfg_.customers) {
    CustomerRecord r;
    r.key = random_key(master, KeyKind::Session);
    r.profile = Term::atom(c.profile);
    r.password = c.password;
    customer_keys[c.id] = r.key;
    records[c.id] = r;
  }

  for (const auto& [me_id, g] : groups) {
    auto& s = new_party(Role::ME, me_id);
    MEData d;
    d.private_key = g.private_key;
    d.public_key = g.public_key;
    d.own = make_view(g, me_id);
    for (const auto& n : neighbors_[me_id]) {
      auto view = make_view(groups.at(n), me_id);
      d.neighbors.emplace(view.me_hash, std::move(view));
    }
    d.customers = records;
    s.data = std::move(d);

    for (const auto& pid : g.cfg.providers) {
      auto& ps = new_party(Role::P, pid);
      PData pd;
      pd.own = make_view(g, pid);
      pd.me_public = g.public_key;
      for (const auto& n : neighbors_[me_id]) {
        pd.neighbor_group_keys[id_hash(n)] = groups.at(n).group_key;
      }
      if (auto it = cfg_.limited.find(pid); it != cfg_.limited.end()) pd.limited_tiers = it->second;
      ps.data = std::move(pd);
    }
  }

  for (const auto& c : cfg_.customers) {
    auto& s = new_party(Role::C, c.id);
    CData cd;
    cd.customer_key = customer_keys.at(c.id);
    cd.password = c.password;
    cd.auto_join = c.auto_join;
    cd.reconnect_on_limited = c.reconnect_on_limited;
    cd.alternates = c.alternates;
    s.data = std::move(cd);
  }

  for (const auto& [a, b] : cfg_.blocked_links) {
    if (!parties_.contains(a) || !parties_.contains(b)) {
      throw Error(Errc::ConfigParse, "blocked link names unknown party " + a + "/" + b);
    }
  }

  if (cfg_.intruder.present) {
    knowledge_ = std::make_unique<Knowledge>(registry_.get());
    std::vector<Term> initial;
    for (const auto& [id, st] : parties_) initial.push_back(Term::id(id));
    for (const auto& [id, g] : groups) initial.push_back(key_term(g.public_key));
    knowledge_->add_all(initial);
  }
}

void NetworkSim::push(Seconds at, std::variant<Deliver, Forward, Wake, Action> what) {
  queue_.push(Event{std::max(at, now_), seq_++, std::move(what)});
}

void NetworkSim::schedule(const ScheduleItem& item) { push(item.at, Action{item}); }

void NetworkSim::run() { run_until(std::numeric_limits<Seconds>::infinity()); }

void NetworkSim::run_until(Seconds t) {
  while (!queue_.empty() && queue_.top().time <= t) {
    if (processed_ >= cfg_.max_events) {
      throw Error(Errc::BudgetExhausted, "event budget of " + std::to_string(cfg_.max_events) + " exhausted");
    }
    Event e = queue_.top();
    queue_.pop();
    ++processed_;
    now_ = e.time;
    process(std::move(e));
  }
}

const PartyState& NetworkSim::party(const std::string& id) const {
  auto it = parties_.find(id);
  if (it == parties_.end()) throw Error(Errc::ScenarioRoutingFailure, "unknown party " + id);
  return it->second;
}

std::vector<std::string> NetworkSim::party_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, s] : parties_) out.push_back(id);
  return out;
}

void NetworkSim::process(Event e) {
  std::visit(
      [&](auto& w) {
        using T = std::decay_t<decltype(w)>;
        if constexpr (std::is_same_v<T, Deliver>) {
          if (!parties_.contains(w.recipient)) return;
          transition(w.recipient, [&](PartyState s) { return step(std::move(s), w.msg, now_); });
        } else if constexpr (std::is_same_v<T, Forward>) {
          trace_.push_back(TraceEvent{now_, EventKind::Send, kIntruderId, w.recipient, kIntruderId,
                                      std::string(to_string(w.msg.kind)), w.msg.body});
          push(now_ + cfg_.latency, Deliver{w.msg, w.recipient});
        } else if constexpr (std::is_same_v<T, Wake>) {
          transition(w.party, [&](PartyState s) { return tick(std::move(s), now_); });
        } else {
          run_action(w.item);
        }
      },
      e.what);
}

template <class F>
void NetworkSim::transition(const std::string& id, F&& f) {
  PartyState copy = parties_.at(id);
  StepResult r = [&] {
    counters::Scope scope(ops_[id]);
    return f(std::move(copy));
  }();
  apply(id, std::move(r));
}

void NetworkSim::apply(const std::string& id, StepResult r) {
  parties_.at(id) = std::move(r.state);
  for (auto& ev : r.events) trace_.push_back(std::move(ev));
  for (auto w : r.wakeups) push(w, Wake{id});
  for (const auto& m : r.out) {
    max_honest_depth_ = std::max(max_honest_depth_, m.body.depth());
    route(m);
  }
}

bool NetworkSim::blocked(const std::string& a, const std::string& b) const {
  return std::any_of(cfg_.blocked_links.begin(), cfg_.blocked_links.end(), [&](const auto& l) {
    return (l.first == a && l.second == b) || (l.first == b && l.second == a);
  });
}

bool NetworkSim::hears(const std::string& party) const {
  if (!knowledge_) return false;
  return cfg_.intruder.reach_all || cfg_.intruder.reach.contains(party);
}

void NetworkSim::intruder_forward(const ProtocolMessage& m, const std::string& to, Seconds extra_delay) {
  if (!hears(to) || !parties_.contains(to)) return;
  ProtocolMessage copy = m;
  copy.origin = kIntruderId;
  if (copy.to != kBroadcastAddress) copy.to = to;
  push(now_ + cfg_.latency + extra_delay, Forward{std::move(copy), to});
}

void NetworkSim::route(const ProtocolMessage& m) {
  const auto& sender = m.origin;
  const bool overheard = hears(sender);
  if (overheard) knowledge_->add(m.body);
  const bool relay = overheard && cfg_.intruder.relay;

  if (m.to == kBroadcastAddress) {
    for (const auto& [id, st] : parties_) {
      if (st.role != Role::C || id == sender) continue;
      if (!blocked(sender, id)) {
        push(now_ + cfg_.latency, Deliver{m, id});
      } else if (relay) {
        intruder_forward(m, id, cfg_.intruder.relay_delay);
      }
    }
    return;
  }

  bool deliver = true;
  if (overheard) {
    for (std::size_t i = 0; i < cfg_.intruder.rules.size(); ++i) {
      const auto& rule = cfg_.intruder.rules[i];
      if (rule.kind && *rule.kind != m.kind) continue;
      if (rule.from && *rule.from != m.from) continue;
      if (rule.to && *rule.to != m.to) continue;
      const int hit = ++rule_hits_[i];
      if (rule.nth != 0 && hit != rule.nth) continue;
      switch (rule.action) {
        case IntruderRule::Action::Block: deliver = false; break;
        case IntruderRule::Action::Replay: intruder_forward(m, rule.target, rule.delay); break;
        case IntruderRule::Action::Redirect:
          deliver = false;
          intruder_forward(m, rule.target, rule.delay);
          break;
      }
    }
  }
  if (!deliver) return;
  if (!blocked(sender, m.to)) {
    push(now_ + cfg_.latency, Deliver{m, m.to});
  } else if (relay) {
    intruder_forward(m, m.to, cfg_.intruder.relay_delay);
  }
}

void NetworkSim::spoof(MsgKind kind, const std::string& from, const std::string& to, const Term& body) {
  if (!knowledge_) throw Error(Errc::UnderivableSpoof, "no intruder in this scenario");
  if (!knowledge_->derivable(body)) throw Error(Errc::UnderivableSpoof, "body not derivable: " + render(body));
  ProtocolMessage m{kind, from, to, body, kIntruderId};
  push(now_, Forward{std::move(m), to});
}

void NetworkSim::validate_cc(const ScheduleItem& item) const {
  auto associated = [&](const std::string& c) -> const CData& {
    auto it = parties_.find(c);
    if (it == parties_.end() || it->second.role != Role::C) {
      throw Error(Errc::ScenarioRoutingFailure, c + " is not a customer");
    }
    const auto& cd = it->second.c();
    if (cd.provider.empty() || !cd.ticket || !cd.session) {
      throw Error(Errc::ScenarioRoutingFailure, c + " holds no ticket");
    }
    return cd;
  };
  const auto& ci = associated(item.customer);
  const auto& cj = associated(item.peer);
  const auto& gi = provider_group_.at(ci.provider);
  const auto& gj = provider_group_.at(cj.provider);
  bool ok = false;
  switch (item.cc) {
    case CcScenario::SameP: ok = ci.provider == cj.provider; break;
    case CcScenario::SameGroup: ok = ci.provider != cj.provider && gi == gj; break;
    case CcScenario::CrossGroup: {
      auto n = neighbors_.find(gj);
      ok = gi != gj && n != neighbors_.end() && n->second.contains(gi);
      break;
    }
  }
  if (!ok) {
    throw Error(Errc::ScenarioRoutingFailure,
                fmt::format("{} at {} and {} at {} do not form a {} pair", item.customer, ci.provider, item.peer,
                            cj.provider, to_string(item.cc)));
  }
}

void NetworkSim::run_action(const ScheduleItem& item) {
  if (!item.phase.empty()) phases_.push_back(PhaseMark{item.phase, trace_.size(), ops_});
  auto require = [&](const std::string& id, Role role) {
    auto it = parties_.find(id);
    if (it == parties_.end() || it->second.role != role) {
      throw Error(Errc::ScenarioRoutingFailure, "schedule names unknown party " + id);
    }
  };
  switch (item.action) {
    case ScheduleItem::Action::Broadcast:
      require(item.provider, Role::P);
      transition(item.provider, [&](PartyState s) { return broadcast_pk(std::move(s), now_); });
      break;
    case ScheduleItem::Action::Join:
      require(item.customer, Role::C);
      try {
        transition(item.customer, [&](PartyState s) { return start_join(std::move(s), item.provider, now_); });
      } catch (const Error& e) {
        if (e.code() != Errc::NoBroadcastSeen) throw;
      }
      break;
    case ScheduleItem::Action::Switch:
      require(item.customer, Role::C);
      try {
        transition(item.customer, [&](PartyState s) { return start_switch(std::move(s), item.provider, now_); });
      } catch (const Error& e) {
        if (e.code() != Errc::NoTicket) throw;
      }
      break;
    case ScheduleItem::Action::CC: {
      validate_cc(item);
      for (auto& [id, st] : parties_) {
        if (st.role == Role::P) st.p().tamper_partial_for.clear();
      }
      // "initiator" corrupts the initiator's partial key on its way to the
      // responder, "responder" the other direction.
      if (item.tamper == "initiator") {
        parties_.at(parties_.at(item.peer).c().provider).p().tamper_partial_for = item.peer;
      } else if (item.tamper == "responder") {
        parties_.at(parties_.at(item.customer).c().provider).p().tamper_partial_for = item.customer;
      } else if (item.tamper != "none") {
        throw Error(Errc::ConfigParse, "unknown tamper target " + item.tamper);
      }
      transition(item.customer, [&](PartyState s) { return start_cc(std::move(s), item.peer, now_); });
      break;
    }
  }
}

std::vector<Term> NetworkSim::secrets() const {
  std::set<Term> out;
  auto add_key = [&](const Key& k) { out.insert(key_term(k)); };
  auto add_view = [&](const ChainView& v) {
    add_key(v.group_key);
    for (const auto& g : v.chain->generators()) out.insert(digest_term(g));
    for (const auto& k : v.chain->keys()) add_key(k);
  };
  for (const auto& [id, st] : parties_) {
    switch (st.role) {
      case Role::ME: {
        const auto& d = st.me();
        add_key(d.private_key);
        add_view(d.own);
        for (const auto& [h, v] : d.neighbors) add_view(v);
        for (const auto& [c, r] : d.customers) add_key(r.key);
        break;
      }
      case Role::P: {
        const auto& d = st.p();
        add_view(d.own);
        for (const auto& [h, k] : d.neighbor_group_keys) add_key(k);
        for (const auto& [c, k] : d.sessions) add_key(k);
        for (const auto& [c, pc] : d.pending) add_key(pc.session);
        break;
      }
      case Role::C: {
        const auto& d = st.c();
        add_key(d.customer_key);
        if (d.session) add_key(d.session->key);
        if (d.cc && d.cc->kij) add_key(*d.cc->kij);
        break;
      }
    }
  }
  return {out.begin(), out.end()};
}

namespace {

CcOutcome cc_outcome(const NetworkSim& sim, const std::string& i, const std::string& j, std::size_t begin) {
  CcOutcome out;
  if (sim.has_party(i) && sim.party(i).c().cc) out.initiator_key = sim.party(i).c().cc->kij;
  if (sim.has_party(j) && sim.party(j).c().cc) out.responder_key = sim.party(j).c().cc->kij;
  const auto& tr = sim.trace();
  for (std::size_t k = begin; k < tr.size(); ++k) {
    const auto& e = tr[k];
    if (e.kind == EventKind::Send) out.script.push_back(fmt::format("{}->{}:{}", e.actor, e.peer, e.label));
    if (e.actor == j && e.peer == i && e.label == "CCConfirm") {
      if (e.kind == EventKind::Auth) out.authenticated = true;
      if (e.kind == EventKind::Alert) out.alert = true;
    }
  }
  return out;
}

}  // namespace

CcOutcome cc_mutual(NetworkSim& sim, const std::string& initiator, const std::string& responder, CcScenario scenario,
                    const std::string& tamper) {
  ScheduleItem item;
  item.at = sim.now();
  item.action = ScheduleItem::Action::CC;
  item.customer = initiator;
  item.peer = responder;
  item.cc = scenario;
  item.tamper = tamper;
  const auto begin = sim.trace().size();
  sim.schedule(item);
  sim.run();
  return cc_outcome(sim, initiator, responder, begin);
}

RunResult run_scenario(const ScenarioConfig& cfg) {
  NetworkSim sim(cfg);
  sim.run();
  RunResult r;
  r.trace = sim.trace();
  r.precedes_holds = check_precedes(r.trace).holds;
  if (!r.precedes_holds) {
    r.verdict = AttackVerdict::AttackSucceeded;
  } else {
    r.verdict = sim.intruder() ? AttackVerdict::AttackFailed : AttackVerdict::NoAttack;
  }
  r.phases = sim.phases();
  r.ops = sim.ops();
  r.precompute = sim.precompute();
  for (std::size_t k = 0; k < r.phases.size(); ++k) {
    const auto& ph = r.phases[k];
    // Match the phase back to its CC schedule item.
    for (const auto& item : sim.config().schedule) {
      if (item.action != ScheduleItem::Action::CC || item.phase != ph.name) continue;
      r.cc[ph.name] = cc_outcome(sim, item.customer, item.peer, ph.trace_begin);
    }
  }
  return r;
}

}  // namespace tap
