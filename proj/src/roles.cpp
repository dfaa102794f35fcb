#include "tap/roles.hpp"

#include <algorithm>
#include <array>

#include "tap/error.hpp"

namespace tap {

namespace {

constexpr std::array<std::string_view, 20> kMsgNames = {
    "BroadcastPK", "JoinReq",        "JoinFwd",    "TicketGrant", "U0Deliver",       "ChallengeResp", "SwitchReq",
    "SwitchFwd",   "ReGrant",        "Limited",    "Alert",       "CCInit",          "CCReply",       "PartialKeyResp",
    "ResendJoin",  "ResendSwitch",   "AlertJoin",  "SwitchChallenge", "CCFwd",       "CCConfirm"};

// Collects the outputs of one transition.
class Ctx {
 public:
  Ctx(PartyState s, Seconds now) : r_{std::move(s), {}, {}, {}}, now_(now) {}

  PartyState& st() { return r_.state; }
  Seconds now() const { return now_; }
  Seconds local() const { return r_.state.local(now_); }

  void send(MsgKind kind, const std::string& to, Term body) {
    const auto& self = r_.state.id;
    r_.events.push_back({now_, EventKind::Send, self, to, self, std::string(to_string(kind)), body});
    r_.out.push_back({kind, self, to, std::move(body), self});
  }

  void received(const ProtocolMessage& m) {
    r_.events.push_back(
        {now_, EventKind::Receive, r_.state.id, m.from, m.origin, std::string(to_string(m.kind)), m.body});
  }

  void signal(EventKind kind, const std::string& peer, std::string label, const RunData& data,
              const std::string& origin = {}) {
    r_.events.push_back({now_, kind, r_.state.id, peer, origin.empty() ? r_.state.id : origin, std::move(label),
                         data.to_term()});
  }

  void wake(Seconds at) { r_.wakeups.push_back(at); }

  StepResult finish() { return std::move(r_); }

 private:
  StepResult r_;
  Seconds now_;
};

Term fresh_nonce(PartyState& s, const std::string& tag) {
  NonceValue v{};
  for (std::size_t i = 0; i < v.size(); i += 8) {
    const auto x = s.rng();
    for (std::size_t b = 0; b < 8; ++b) v[i + b] = static_cast<std::uint8_t>(x >> (8 * b));
  }
  return Term::nonce(tag, v);
}

Bytes random_bytes(PartyState& s, std::size_t n) {
  Bytes out;
  out.reserve(n);
  while (out.size() < n) {
    auto x = s.rng();
    for (int b = 0; b < 8 && out.size() < n; ++b, x >>= 8) out.push_back(static_cast<std::uint8_t>(x));
  }
  return out;
}

Digest key_fp(const Key& k) { return fingerprint(key_term(k)); }

std::span<const Term> parts_of(const Term& t, std::size_t n) {
  if (!t.is(Term::Tag::Cat) || t.parts().size() != n) throw Error(Errc::Malformed, "unexpected body shape");
  return t.parts();
}

bool is_atom(const Term& t, std::string_view label) { return t.is(Term::Tag::Atom) && t.text() == label; }

const std::string& id_text(const Term& t) {
  if (!t.is(Term::Tag::Id)) throw Error(Errc::Malformed, "expected an id");
  return t.text();
}

Digest party_hash(const std::string& id) { return hash(ByteView(reinterpret_cast<const std::uint8_t*>(id.data()), id.size())); }

// ---------------------------------------------------------------------------
// ME

std::optional<JoinRequest> parse_join(Ctx& ctx, const ProtocolMessage& fwd) {
  auto& st = ctx.st();
  auto& me = st.me();
  const Term* payload = nullptr;
  try {
    payload = &open(me.private_key, fwd.body, st.registry.get());
  } catch (const Error&) {
    return std::nullopt;
  }
  if (!payload->is(Term::Tag::Cat)) return std::nullopt;
  const auto p = payload->parts();
  if (p.size() != 2 && p.size() != 3 && p.size() != 5) return std::nullopt;
  if (!p[0].is(Term::Tag::Id) || !p[1].is(Term::Tag::Nonce)) return std::nullopt;

  JoinRequest req;
  req.via = fwd.from;
  req.body_fp = fingerprint(fwd.body);
  req.customer = p[0].text();
  req.n0 = p[1];
  req.received = ctx.now();
  if (p.size() >= 3) req.prev_n0 = p[2];
  if (p.size() == 5) {
    if (!is_atom(p[4], "alert")) return std::nullopt;
    req.alert_join = true;
  }

  const auto rec = me.customers.find(req.customer);
  if (rec == me.customers.end()) return std::nullopt;
  if (rec->second.password && req.n0 != password_nonce(*rec->second.password)) {
    ctx.signal(EventKind::Alert, fwd.from, "M2", RunData{req.n0, {}, {}, {}, req.customer});
    return std::nullopt;
  }
  return req;
}

/// Issues T_k for the current interval and returns (ticket, session, V_i, i).
struct Issued {
  Ticket ticket;
  SessionKey session;
  Value32 index_value;
};

std::optional<Issued> issue_for(Ctx& ctx, const CustomerRecord& rec, const std::string& customer, bool reauth) {
  auto& me = ctx.st().me();
  const auto& chain = *me.own.chain;
  const auto i = interval_index(ctx.local(), me.own.chain_start_local, chain.interval_len(), chain.length());
  if (i >= chain.length()) return std::nullopt;

  const Value32& v = chain.index_vector()[i];
  const Digest kc = hash(rec.key.view());
  SessionKey session = reauth ? SessionKey{reauth_session_key(rec.key, v), chain.length() - i, i}
                              : derive_session_key(chain.keys()[i], kc, i, chain.length());

  TicketRequest req;
  req.mode = me.own.mode;
  req.customer = Term::id(customer);
  req.session = session;
  req.interval = i;
  req.index_value = v;
  req.profile = rec.profile;
  req.customer_key_digest = kc;
  if (req.mode != RetrievalMode::Mode3) {
    req.generator_digest = Digest::from(xor_combine(chain.keys()[i].view(), chain.nonce()));
  }
  req.issued_at = ctx.local();
  req.tree = me.own.tree.get();
  return Issued{issue_ticket(req, chain.keys()[i], me.own.group_key), session, v};
}

void grant_join(Ctx& ctx, const JoinRequest& req, bool alert) {
  auto& st = ctx.st();
  auto& me = st.me();
  const auto& rec = me.customers.at(req.customer);
  auto issued = issue_for(ctx, rec, req.customer, false);
  if (!issued) return;

  const Term n1 = fresh_nonce(st, "N1");
  const Term tk = issued->ticket.to_term();
  const Term u0 = seal(rec.key, Term::cat({Term::id(req.via), nonce_successor(req.n0), n1, tk,
                                           Term::num(issued->session.valid_intervals), to_term(issued->session)}));
  const Term for_p = seal(me.own.group_key, Term::cat({Term::bytes(ByteView(issued->index_value)), n1, tk}));
  std::vector<Term> body{u0, for_p};
  if (alert) body.push_back(Term::atom("alert"));

  ctx.signal(EventKind::Conf, req.via, "M4",
             RunData{req.n0, n1, fingerprint(tk), key_fp(issued->session.key), req.customer});
  ctx.send(MsgKind::TicketGrant, req.via, Term::cat(std::move(body)));
}

void me_flush(Ctx& ctx) {
  auto& me = ctx.st().me();
  if (!me.batch_deadline || ctx.now() < *me.batch_deadline) return;
  auto batch = std::move(me.batch);
  me.batch.clear();
  me.batch_deadline.reset();

  const Seconds window = ctx.st().config.duplicate_window();
  std::set<std::string> granted_now;
  for (const auto& req : batch) {
    auto& recent = me.recent_joins[req.customer];
    std::erase_if(recent, [&](const auto& e) { return e.first < ctx.now() - window; });

    const bool linked = req.prev_n0 && std::any_of(recent.begin(), recent.end(),
                                                   [&](const auto& e) { return e.second == *req.prev_n0; });
    const auto same = std::count_if(batch.begin(), batch.end(),
                                    [&](const JoinRequest& o) { return o.customer == req.customer; });
    const bool dup_body = me.seen_bodies[req.body_fp] > 1;
    const bool recent_unlinked = !linked && !recent.empty();
    const bool alert = dup_body || (same > 1 && !linked) || recent_unlinked || req.alert_join;

    const RunData data{req.n0, {}, {}, {}, req.customer};
    if (req.alert_join) ctx.signal(EventKind::Alert, req.via, "AlertJoin", data);
    if (alert && !req.alert_join) ctx.signal(EventKind::Alert, req.via, "M4", data);

    if (ctx.st().config.restricted && !linked && (granted_now.count(req.customer) || recent_unlinked)) continue;
    recent.emplace_back(ctx.now(), req.n0);
    granted_now.insert(req.customer);
    grant_join(ctx, req, alert);
  }
}

void me_on_join_fwd(Ctx& ctx, const ProtocolMessage& m) {
  auto req = parse_join(ctx, m);
  if (!req) return;
  auto& me = ctx.st().me();
  ++me.seen_bodies[req->body_fp];
  me.batch.push_back(std::move(*req));
  if (!me.batch_deadline) {
    me.batch_deadline = ctx.now() + ctx.st().config.latency;
    ctx.wake(*me.batch_deadline);
  }
}

struct OpenedTicket {
  VerifiedTicket vt;
  Ticket ticket;
};

/// Tries the ME's own group and then each neighbour.
std::optional<OpenedTicket> me_verify_any(Ctx& ctx, const Term& tk) {
  auto& me = ctx.st().me();
  const Ticket ticket = Ticket::from_term(tk);
  std::vector<ChainView*> views{&me.own};
  for (auto& [h, v] : me.neighbors) views.push_back(&v);
  for (auto* v : views) {
    try {
      auto vt = verify_ticket(ticket, *v->chain, *v->tree, v->group_key, v->drift, ctx.local());
      return OpenedTicket{std::move(vt), ticket};
    } catch (const Error& e) {
      if (e.code() != Errc::WrongGroupKey) return std::nullopt;
    }
  }
  return std::nullopt;
}

void me_on_switch_fwd(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& me = st.me();
  const auto outer = parts_of(m.body, 2);
  const auto sw = parts_of(outer[0], 3);
  const std::string& claimed = id_text(outer[1]);

  const Digest h = Digest::from(sw[2].data());
  auto nb = me.neighbors.find(h);
  if (nb == me.neighbors.end()) return;
  const Ticket old = Ticket::from_term(sw[1]);
  VerifiedTicket vt;
  try {
    vt = verify_ticket(old, *nb->second.chain, *nb->second.tree, nb->second.group_key, nb->second.drift,
                       ctx.local());
  } catch (const Error&) {
    ctx.signal(EventKind::Alert, m.from, "M2", RunData{{}, {}, fingerprint(sw[1]), {}, claimed});
    return;
  }
  const auto inner = open(vt.session.key, sw[0]);
  if (!inner.is(Term::Tag::Cat) || inner.parts().size() < 2) return;
  const auto ip = inner.parts();
  if (ip[0] != vt.customer || id_text(vt.customer) != claimed) return;
  const Term n0 = ip[1];

  const auto rec = me.customers.find(claimed);
  if (rec == me.customers.end()) return;

  const Digest body_fp = fingerprint(outer[0]);
  if (++me.seen_bodies[body_fp] > 1) {
    ctx.signal(EventKind::Alert, m.from, "M2", RunData{n0, {}, {}, {}, claimed});
    if (st.config.restricted) return;
  }

  auto issued = issue_for(ctx, rec->second, claimed, true);
  if (!issued) return;
  const Term n1 = fresh_nonce(st, "N1");
  const Term tk = issued->ticket.to_term();
  const Term u0 = seal(rec->second.key, Term::cat({tk, Term::num(issued->session.valid_intervals),
                                                   to_term(issued->session), n1, nonce_successor(n0),
                                                   Term::id(m.from)}));
  const Term for_p = seal(me.own.group_key, Term::cat({Term::bytes(ByteView(issued->index_value)), n1, tk}));
  ctx.signal(EventKind::Conf, m.from, "M3", RunData{n0, n1, fingerprint(tk), key_fp(issued->session.key), claimed});
  ctx.send(MsgKind::ReGrant, m.from, Term::cat({u0, for_p}));
}

void me_on_cc_fwd(Ctx& ctx, const ProtocolMessage& m) {
  const auto f = parts_of(m.body, 3);
  const auto body = parts_of(f[1], 2);
  auto opened = me_verify_any(ctx, body[1]);
  if (!opened) return;
  const Term& payload = open(opened->vt.session.key, body[0]);
  if (!payload.is(Term::Tag::Cat) || payload.parts().empty() || payload.parts()[0] != opened->vt.customer) return;
  ctx.send(MsgKind::PartialKeyResp, m.from, seal(ctx.st().me().own.group_key, Term::cat({f[2], payload})));
}

void me_step(Ctx& ctx, const ProtocolMessage& m) {
  switch (m.kind) {
    case MsgKind::JoinFwd: me_on_join_fwd(ctx, m); break;
    case MsgKind::SwitchFwd: me_on_switch_fwd(ctx, m); break;
    case MsgKind::CCFwd: me_on_cc_fwd(ctx, m); break;
    default: break;
  }
}

// ---------------------------------------------------------------------------
// P

void p_fail(Ctx& ctx, const std::string& customer, const PendingChallenge& pc) {
  const RunData data{pc.n0, pc.n1, pc.ticket_fp, key_fp(pc.session), customer};
  const std::string label(final_step(pc.kind));
  ctx.signal(EventKind::Alert, customer, label, data);
  ctx.signal(EventKind::ServiceHalt, customer, label, data);
  ctx.send(MsgKind::Alert, ctx.st().p().own.me, Term::cat({Term::atom(label), Term::id(customer)}));
}

void p_on_request(Ctx& ctx, const ProtocolMessage& m) {
  auto& p = ctx.st().p();
  if (ctx.st().config.restricted && !p.pending.empty()) return;
  ctx.send(MsgKind::JoinFwd, p.own.me, m.body);
}

void p_on_switch(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& p = st.p();
  const auto b = parts_of(m.body, 3);
  if (++p.seen_switch[fingerprint(m.body)] > 1) {
    ctx.signal(EventKind::Alert, m.from, "M1", RunData{{}, {}, fingerprint(b[1]), {}, m.from});
    return;
  }
  if (st.config.restricted && !p.pending.empty()) return;

  const Digest h = Digest::from(b[2].data());
  const Ticket ticket = Ticket::from_term(b[1]);
  if (h == p.own.me_hash) {
    VerifiedTicket vt;
    try {
      vt = verify_ticket(ticket, *p.own.chain, *p.own.tree, p.own.group_key, p.own.drift, ctx.local());
    } catch (const Error&) {
      const RunData data{{}, {}, fingerprint(b[1]), {}, m.from};
      ctx.signal(EventKind::Alert, m.from, "M1", data);
      ctx.signal(EventKind::ServiceHalt, m.from, "M1", data);
      ctx.send(MsgKind::Alert, p.own.me, Term::cat({Term::atom("M1"), Term::id(m.from)}));
      return;
    }
    const Term& inner = open(vt.session.key, b[0]);
    if (!inner.is(Term::Tag::Cat) || inner.parts().size() < 2 || inner.parts()[0] != vt.customer) return;
    const std::string& customer = id_text(vt.customer);
    if (customer != m.from) return;
    const Term n0 = inner.parts()[1];
    const Term n1 = fresh_nonce(st, "N1");
    PendingChallenge pc{RunKind::RA1, n1, n0, vt.session.key, fingerprint(b[1]),
                        ctx.now() + st.config.timeout(), false};
    ctx.send(MsgKind::SwitchChallenge, customer,
             seal(vt.session.key, Term::cat({Term::id(st.id), n1, nonce_successor(n0)})));
    p.pending[customer] = pc;
    ctx.wake(pc.deadline);
    return;
  }

  auto nb = p.neighbor_group_keys.find(h);
  if (nb == p.neighbor_group_keys.end()) return;  // outside G and G^o: ignored
  Term customer = Term::atom("");
  try {
    customer = retrieval_customer(ticket, nb->second);
  } catch (const Error&) {
    return;
  }
  if (!customer.is(Term::Tag::Id) || customer.text() != m.from) return;
  ctx.send(MsgKind::SwitchFwd, p.own.me, Term::cat({m.body, Term::id(m.from)}));
}

void p_on_grant(Ctx& ctx, const ProtocolMessage& m, RunKind kind) {
  auto& st = ctx.st();
  auto& p = st.p();
  if (!m.body.is(Term::Tag::Cat)) return;
  const auto b = m.body.parts();
  if (b.size() < 2) return;

  const auto inner = parts_of(open(p.own.group_key, b[1]), 3);
  const Ticket ticket = Ticket::from_term(inner[2]);
  VerifiedTicket vt;
  try {
    vt = verify_ticket(ticket, *p.own.chain, *p.own.tree, p.own.group_key, p.own.drift, ctx.local());
  } catch (const Error&) {
    ctx.signal(EventKind::Alert, m.from, kind == RunKind::IA ? "M4" : "M3",
               RunData{{}, inner[1], fingerprint(inner[2]), {}, {}});
    ctx.send(MsgKind::Alert, p.own.me, Term::cat({Term::atom("invalid-ticket"), Term::atom("")}));
    return;
  }
  if (inner[0].data() != Bytes(vt.index_value.begin(), vt.index_value.end())) return;
  const std::string& customer = id_text(vt.customer);
  if (st.config.restricted && !p.pending.empty()) return;

  const Term& n1 = inner[1];
  const RunData data{{}, n1, fingerprint(inner[2]), key_fp(vt.session.key), customer};
  ctx.signal(EventKind::Auth, m.from, kind == RunKind::IA ? "M4" : "M3", data, m.origin);

  const bool limited = kind == RunKind::IA && p.limited_tiers.count(profile_tier(vt.profile)) > 0;
  PendingChallenge pc{kind, n1, std::nullopt, vt.session.key, fingerprint(inner[2]),
                      ctx.now() + st.config.timeout(), limited};
  if (limited) {
    ctx.send(MsgKind::Limited, customer, Term::cat({b[0], Term::atom("limited")}));
  } else {
    ctx.send(MsgKind::U0Deliver, customer, b[0]);
  }
  p.pending[customer] = pc;
  ctx.wake(pc.deadline);
}

void p_on_challenge_resp(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& p = st.p();
  auto it = p.pending.find(m.from);
  if (it == p.pending.end()) return;
  const PendingChallenge pc = it->second;
  p.pending.erase(it);

  bool ok = false;
  try {
    const auto r = parts_of(open(pc.session, m.body), 2);
    ok = r[0] == Term::id(m.from) && r[1] == nonce_successor(pc.n1);
  } catch (const Error&) {
    ok = false;
  }
  if (!ok) {
    p_fail(ctx, m.from, pc);
    return;
  }
  const RunData data{pc.n0, pc.n1, pc.ticket_fp, key_fp(pc.session), m.from};
  const std::string label(final_step(pc.kind));
  ctx.signal(EventKind::Auth, m.from, label, data, m.origin);
  ctx.signal(EventKind::ServiceStart, m.from, label, data);
  p.sessions[m.from] = pc.session;
}

void p_reply_partial(Ctx& ctx, const std::string& requester, Term payload) {
  auto& p = ctx.st().p();
  auto s = p.sessions.find(requester);
  if (s == p.sessions.end()) return;
  if (p.tamper_partial_for == requester && payload.is(Term::Tag::Cat) && !payload.parts().empty() &&
      payload.parts().back().is(Term::Tag::Bytes)) {
    std::vector<Term> parts(payload.parts().begin(), payload.parts().end());
    Bytes k = parts.back().data();
    if (!k.empty()) k[0] ^= 0x01;
    parts.back() = Term::bytes(std::move(k));
    payload = Term::cat(std::move(parts));
  }
  ctx.send(MsgKind::PartialKeyResp, requester, seal(s->second, std::move(payload)));
}

void p_on_cc_fwd(Ctx& ctx, const ProtocolMessage& m) {
  auto& p = ctx.st().p();
  const auto f = parts_of(m.body, 3);
  if (id_text(f[2]) != m.from) return;
  const auto body = parts_of(f[1], 2);
  const Ticket ticket = Ticket::from_term(body[1]);
  VerifiedTicket vt;
  try {
    vt = verify_ticket(ticket, *p.own.chain, *p.own.tree, p.own.group_key, p.own.drift, ctx.local());
  } catch (const Error& e) {
    if (e.code() == Errc::WrongGroupKey) ctx.send(MsgKind::CCFwd, p.own.me, m.body);
    return;
  }
  const Term& payload = open(vt.session.key, body[0]);
  if (!payload.is(Term::Tag::Cat) || payload.parts().empty() || payload.parts()[0] != vt.customer) return;
  p_reply_partial(ctx, m.from, payload);
}

void p_on_partial_from_me(Ctx& ctx, const ProtocolMessage& m) {
  auto& p = ctx.st().p();
  if (m.from != p.own.me) return;
  const auto r = parts_of(open(p.own.group_key, m.body), 2);
  p_reply_partial(ctx, id_text(r[0]), r[1]);
}

void p_step(Ctx& ctx, const ProtocolMessage& m) {
  switch (m.kind) {
    case MsgKind::JoinReq:
    case MsgKind::ResendJoin:
    case MsgKind::AlertJoin: p_on_request(ctx, m); break;
    case MsgKind::SwitchReq:
    case MsgKind::ResendSwitch: p_on_switch(ctx, m); break;
    case MsgKind::TicketGrant: p_on_grant(ctx, m, RunKind::IA); break;
    case MsgKind::ReGrant: p_on_grant(ctx, m, RunKind::RA2); break;
    case MsgKind::ChallengeResp: p_on_challenge_resp(ctx, m); break;
    case MsgKind::CCFwd: p_on_cc_fwd(ctx, m); break;
    case MsgKind::PartialKeyResp: p_on_partial_from_me(ctx, m); break;
    default: break;
  }
}

void p_tick(Ctx& ctx) {
  auto& p = ctx.st().p();
  std::vector<std::pair<std::string, PendingChallenge>> expired;
  for (auto it = p.pending.begin(); it != p.pending.end();) {
    if (it->second.deadline <= ctx.now()) {
      expired.emplace_back(it->first, it->second);
      it = p.pending.erase(it);
    } else {
      ++it;
    }
  }
  for (const auto& [customer, pc] : expired) {
    if (pc.limited) {
      ctx.signal(EventKind::ServiceHalt, customer, "limited",
                 RunData{pc.n0, pc.n1, pc.ticket_fp, key_fp(pc.session), customer});
    } else {
      p_fail(ctx, customer, pc);
    }
  }
}

// ---------------------------------------------------------------------------
// C

void c_send_join(Ctx& ctx, MsgKind kind, const std::string& provider, Term payload) {
  auto& c = ctx.st().c();
  const auto b = c.broadcasts.find(provider);
  if (b == c.broadcasts.end()) throw Error(Errc::NoBroadcastSeen, "no broadcast heard from " + provider);
  ctx.send(kind, provider, seal(b->second.second, std::move(payload)));
}

void c_arm(Ctx& ctx) {
  auto& run = *ctx.st().c().run;
  run.deadline = ctx.now() + ctx.st().config.timeout();
  ctx.wake(run.deadline);
}

void c_join(Ctx& ctx, const std::string& provider, std::optional<Term> n0) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!n0) n0 = c.password ? password_nonce(*c.password) : fresh_nonce(st, "N0");
  c_send_join(ctx, MsgKind::JoinReq, provider, Term::cat({Term::id(st.id), *n0}));
  c.run = CRun{CRun::Kind::Join, provider, *n0, std::nullopt, 0, 0};
  c_arm(ctx);
}

Term switch_body(PartyState& st, const Term& inner_payload) {
  auto& c = st.c();
  return Term::cat({seal(c.session->key, inner_payload), c.ticket->to_term(), Term::bytes(party_hash(c.me).view())});
}

void c_switch(Ctx& ctx, const std::string& provider) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!c.ticket || !c.session) throw Error(Errc::NoTicket, "switch needs a ticket");
  const Term n0 = fresh_nonce(st, "N0");
  ctx.send(MsgKind::SwitchReq, provider, switch_body(st, Term::cat({Term::id(st.id), n0})));
  c.run = CRun{CRun::Kind::Switch, provider, n0, std::nullopt, 0, 0};
  c_arm(ctx);
}

void c_recover(Ctx& ctx, RecoverVariant v) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!c.run) throw Error(Errc::NoTicket, "no pending run to recover");
  CRun& run = *c.run;
  const Term prev = run.n0;
  const Term n0 = fresh_nonce(st, "N0");
  switch (v) {
    case RecoverVariant::Join:
      c_send_join(ctx, MsgKind::ResendJoin, run.provider, Term::cat({Term::id(st.id), n0, prev}));
      break;
    case RecoverVariant::Switch:
      if (!c.ticket || !c.session) throw Error(Errc::NoTicket, "switch resend needs a ticket");
      ctx.send(MsgKind::ResendSwitch, run.provider, switch_body(st, Term::cat({Term::id(st.id), n0, prev})));
      break;
    case RecoverVariant::SwitchAlert:
      if (!c.ticket) throw Error(Errc::NoTicket, "alert join needs a ticket");
      c_send_join(ctx, MsgKind::AlertJoin, run.provider,
                  Term::cat({Term::id(st.id), n0, prev, c.ticket->to_term(), Term::atom("alert")}));
      run.kind = CRun::Kind::Join;
      break;
  }
  run.prev_n0 = prev;
  run.n0 = n0;
  c_arm(ctx);
}

bool answers(const CRun& run, const Term& successor) {
  return successor == nonce_successor(run.n0) || (run.prev_n0 && successor == nonce_successor(*run.prev_n0));
}

void c_on_broadcast(Ctx& ctx, const ProtocolMessage& m) {
  auto& c = ctx.st().c();
  const auto b = parts_of(m.body, 2);
  c.broadcasts[m.from] = {id_text(b[0]), Key::from(b[1].data(), KeyKind::PublicPair)};
  if (c.auto_join && !c.run && c.provider.empty() && !c.ticket) c_join(ctx, m.from, std::nullopt);
}

void c_on_u0(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!c.run || c.run->provider != m.from) return;
  const bool limited = m.kind == MsgKind::Limited;
  const Term& box = limited ? parts_of(m.body, 2)[0] : m.body;
  const Term& u0 = open(c.customer_key, box);

  Term p_id = Term::atom(""), succ = p_id, n1 = p_id, tk = p_id, ks = p_id;
  if (c.run->kind == CRun::Kind::Join) {
    const auto u = parts_of(u0, 6);
    p_id = u[0], succ = u[1], n1 = u[2], tk = u[3], ks = u[5];
  } else {
    const auto u = parts_of(u0, 6);
    tk = u[0], ks = u[2], n1 = u[3], succ = u[4], p_id = u[5];
  }
  if (p_id != Term::id(m.from) || !answers(*c.run, succ)) return;

  const Term answered = succ == nonce_successor(c.run->n0) ? c.run->n0 : *c.run->prev_n0;
  c.ticket = Ticket::from_term(tk);
  c.session = session_key_from_term(ks);
  c.provider = m.from;
  if (auto b = c.broadcasts.find(m.from); b != c.broadcasts.end()) c.me = b->second.first;
  c.run.reset();

  if (limited && c.reconnect_on_limited && !c.alternates.empty()) {
    c_switch(ctx, c.alternates.front());
    return;
  }
  ctx.signal(EventKind::Conf, m.from, limited ? "M5a" : "M5",
             RunData{answered, n1, fingerprint(tk), key_fp(c.session->key), st.id}, m.origin);
  ctx.send(MsgKind::ChallengeResp, m.from, seal(c.session->key, Term::cat({Term::id(st.id), nonce_successor(n1)})));
}

void c_on_switch_challenge(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!c.run || c.run->kind != CRun::Kind::Switch || c.run->provider != m.from || !c.session) return;
  const auto r = parts_of(open(c.session->key, m.body), 3);
  if (r[0] != Term::id(m.from) || !answers(*c.run, r[2])) return;
  const Term answered = r[2] == nonce_successor(c.run->n0) ? c.run->n0 : *c.run->prev_n0;
  const Term n1 = r[1];
  c.provider = m.from;
  c.run.reset();
  ctx.signal(EventKind::Conf, m.from, "M2",
             RunData{answered, n1, fingerprint(c.ticket->to_term()), key_fp(c.session->key), st.id}, m.origin);
  ctx.send(MsgKind::ChallengeResp, m.from, seal(c.session->key, Term::cat({Term::id(st.id), nonce_successor(n1)})));
}

void c_on_cc_init(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (c.provider.empty() || !c.session) return;
  c.cc = CcRun{false, m.from, std::nullopt, std::nullopt, {}, std::nullopt};
  ctx.send(MsgKind::CCFwd, c.provider, Term::cat({Term::atom("init"), m.body, Term::id(st.id)}));
}

void c_on_cc_reply(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!c.cc || !c.cc->initiator || c.cc->peer != m.from) return;
  ctx.send(MsgKind::CCFwd, c.provider, Term::cat({Term::atom("reply"), m.body, Term::id(st.id)}));
}

void c_on_partial(Ctx& ctx, const ProtocolMessage& m) {
  auto& st = ctx.st();
  auto& c = st.c();
  if (!c.cc || m.from != c.provider || !c.session) return;
  CcRun& cc = *c.cc;
  const Term& payload = open(c.session->key, m.body);
  if (!cc.initiator) {
    const auto p = parts_of(payload, 3);
    if (id_text(p[0]) != cc.peer) return;
    cc.n0 = p[1];
    cc.n1 = fresh_nonce(st, "N1");
    cc.own_partial = random_bytes(st, kDigestSize);
    cc.kij = cc_session_key(p[2].data(), cc.own_partial, *cc.n0, *cc.n1);
    ctx.send(MsgKind::CCReply, cc.peer,
             Term::cat({seal(c.session->key, Term::cat({Term::id(st.id), nonce_successor(*cc.n0), *cc.n1,
                                                        Term::bytes(cc.own_partial)})),
                        c.ticket->to_term()}));
    return;
  }
  const auto p = parts_of(payload, 4);
  if (id_text(p[0]) != cc.peer || p[1] != nonce_successor(*cc.n0)) return;
  cc.n1 = p[2];
  cc.kij = cc_session_key(cc.own_partial, p[3].data(), *cc.n0, *cc.n1);
  ctx.signal(EventKind::Conf, cc.peer, "CCReply", RunData{cc.n0, cc.n1, {}, key_fp(*cc.kij), st.id});
  ctx.send(MsgKind::CCConfirm, cc.peer, seal(*cc.kij, Term::cat({Term::id(st.id), nonce_successor(*cc.n1)})));
}

void c_on_cc_confirm(Ctx& ctx, const ProtocolMessage& m) {
  auto& c = ctx.st().c();
  if (!c.cc || c.cc->initiator || c.cc->peer != m.from || !c.cc->kij) return;
  const CcRun& cc = *c.cc;
  const RunData data{cc.n0, cc.n1, {}, key_fp(*cc.kij), cc.peer};
  try {
    const auto r = parts_of(open(*cc.kij, m.body), 2);
    if (r[0] != Term::id(cc.peer) || r[1] != nonce_successor(*cc.n1)) throw Error(Errc::WrongKey, "confirm");
  } catch (const Error&) {
    ctx.signal(EventKind::Alert, m.from, "CCConfirm", data);
    return;
  }
  ctx.signal(EventKind::Auth, m.from, "CCConfirm", data, m.origin);
}

void c_step(Ctx& ctx, const ProtocolMessage& m) {
  switch (m.kind) {
    case MsgKind::BroadcastPK: c_on_broadcast(ctx, m); break;
    case MsgKind::U0Deliver:
    case MsgKind::Limited: c_on_u0(ctx, m); break;
    case MsgKind::SwitchChallenge: c_on_switch_challenge(ctx, m); break;
    case MsgKind::CCInit: c_on_cc_init(ctx, m); break;
    case MsgKind::CCReply: c_on_cc_reply(ctx, m); break;
    case MsgKind::PartialKeyResp: c_on_partial(ctx, m); break;
    case MsgKind::CCConfirm: c_on_cc_confirm(ctx, m); break;
    default: break;
  }
}

void c_tick(Ctx& ctx) {
  auto& c = ctx.st().c();
  if (!c.run || ctx.now() < c.run->deadline) return;
  const int n = ++c.run->timeouts;
  try {
    if (c.run->kind == CRun::Kind::Join) {
      if (n == 1) return c_recover(ctx, RecoverVariant::Join);
    } else if (n == 1) {
      return c_recover(ctx, RecoverVariant::Switch);
    } else if (n == 2) {
      return c_recover(ctx, RecoverVariant::SwitchAlert);
    }
  } catch (const Error&) {
  }
  c.run.reset();
}

template <class F>
StepResult run_guarded(PartyState s, Seconds now, F&& f) {
  // Protocol-level failures become drops: the transition keeps the state as
  // it was before the handler and only the Receive (if any) survives.
  Ctx ctx(s, now);
  try {
    f(ctx);
    return ctx.finish();
  } catch (const Error& e) {
    if (e.code() == Errc::NoBroadcastSeen || e.code() == Errc::NoTicket) throw;
    return {std::move(s), {}, {}, {}};
  }
}

}  // namespace

std::string_view to_string(MsgKind k) { return kMsgNames.at(static_cast<std::size_t>(k)); }

std::optional<MsgKind> parse_msg_kind(std::string_view s) {
  for (std::size_t i = 0; i < kMsgNames.size(); ++i) {
    if (kMsgNames[i] == s) return static_cast<MsgKind>(i);
  }
  return std::nullopt;
}

std::string_view final_step(RunKind k) {
  switch (k) {
    case RunKind::IA: return "M6";
    case RunKind::RA1: return "M3";
    case RunKind::RA2: return "M5";
  }
  return "?";
}

Term password_nonce(const std::string& password) {
  const auto d = hash(ByteView(reinterpret_cast<const std::uint8_t*>(password.data()), password.size()));
  NonceValue v{};
  std::copy_n(d.bytes.begin(), v.size(), v.begin());
  return Term::nonce("pw", v);
}

std::string profile_tier(const Term& profile) {
  if (profile.is(Term::Tag::Atom)) return profile.text();
  if (profile.is(Term::Tag::Cat) && !profile.parts().empty() && profile.parts()[0].is(Term::Tag::Atom)) {
    return profile.parts()[0].text();
  }
  return {};
}

Key cc_session_key(ByteView partial_i, ByteView partial_j, const Term& n0, const Term& n1) {
  const auto a = xor_combine(partial_i, n1.nonce_value());
  const auto b = xor_combine(partial_j, n0.nonce_value());
  return Key::from(hash(concat(a, b)).view(), KeyKind::Session);
}

StepResult step(PartyState state, const ProtocolMessage& incoming, Seconds now) {
  // The Receive event is recorded even when the handler drops the message.
  TraceEvent receive{now, EventKind::Receive, state.id, incoming.from, incoming.origin,
                     std::string(to_string(incoming.kind)), incoming.body};
  auto r = run_guarded(std::move(state), now, [&](Ctx& ctx) {
    switch (ctx.st().role) {
      case Role::ME: me_step(ctx, incoming); break;
      case Role::P: p_step(ctx, incoming); break;
      case Role::C: c_step(ctx, incoming); break;
    }
  });
  r.events.insert(r.events.begin(), std::move(receive));
  return r;
}

StepResult tick(PartyState state, Seconds now) {
  return run_guarded(std::move(state), now, [&](Ctx& ctx) {
    switch (ctx.st().role) {
      case Role::ME: me_flush(ctx); break;
      case Role::P: p_tick(ctx); break;
      case Role::C: c_tick(ctx); break;
    }
  });
}

StepResult broadcast_pk(PartyState p, Seconds now) {
  Ctx ctx(std::move(p), now);
  const auto& pd = ctx.st().p();
  ctx.send(MsgKind::BroadcastPK, kBroadcastAddress, Term::cat({Term::id(pd.own.me), key_term(pd.me_public)}));
  return ctx.finish();
}

StepResult start_join(PartyState c, const std::string& provider, Seconds now, std::optional<Term> n0) {
  Ctx ctx(std::move(c), now);
  c_join(ctx, provider, std::move(n0));
  return ctx.finish();
}

StepResult start_switch(PartyState c, const std::string& provider, Seconds now) {
  Ctx ctx(std::move(c), now);
  c_switch(ctx, provider);
  return ctx.finish();
}

StepResult recover_lost(PartyState c, RecoverVariant variant, Seconds now) {
  Ctx ctx(std::move(c), now);
  c_recover(ctx, variant);
  return ctx.finish();
}

StepResult start_cc(PartyState c, const std::string& peer, Seconds now) {
  Ctx ctx(std::move(c), now);
  auto& st = ctx.st();
  auto& cd = st.c();
  if (!cd.ticket || !cd.session) throw Error(Errc::NoTicket, "customer-to-customer exchange needs a ticket");
  CcRun cc;
  cc.initiator = true;
  cc.peer = peer;
  cc.n0 = fresh_nonce(st, "N0");
  cc.own_partial = random_bytes(st, kDigestSize);
  const Term inner = Term::cat({Term::id(st.id), *cc.n0, Term::bytes(cc.own_partial)});
  ctx.send(MsgKind::CCInit, peer, Term::cat({seal(cd.session->key, inner), cd.ticket->to_term()}));
  cd.cc = std::move(cc);
  return ctx.finish();
}

StepResult me_grant(PartyState me, const ProtocolMessage& fwd, Seconds now, bool alert) {
  return run_guarded(std::move(me), now, [&](Ctx& ctx) {
    if (auto req = parse_join(ctx, fwd)) grant_join(ctx, *req, alert);
  });
}

}  // namespace tap
