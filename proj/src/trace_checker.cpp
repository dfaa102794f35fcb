#include "tap/trace_checker.hpp"

#include <algorithm>
#include <array>

namespace tap {

namespace {

bool matches(const TraceEvent& e, const EventPattern& p) {
  return e.kind == p.kind && (!p.actor || e.actor == *p.actor) && (!p.peer || e.peer == *p.peer);
}

bool is_signal(EventKind k) { return k == EventKind::Conf || k == EventKind::Auth; }

bool is_run_end(EventKind k) {
  return k == EventKind::ServiceStart || k == EventKind::ServiceHalt || k == EventKind::Alert;
}

bool is_request_label(const std::string& l) {
  return l == "JoinReq" || l == "ResendJoin" || l == "AlertJoin" || l == "SwitchReq" || l == "ResendSwitch";
}

std::optional<RunData> run_of(const TraceEvent& e) { return RunData::from_term(e.payload); }

template <class T>
bool agree(const std::optional<T>& a, const std::optional<T>& b) {
  return !a || !b || *a == *b;
}

bool same_run(const RunData& a, const RunData& b) {
  return a.n1 && b.n1 && *a.n1 == *b.n1 && agree(a.n0, b.n0) && agree(a.ticket, b.ticket) &&
         agree(a.session, b.session) && (a.customer.empty() || b.customer.empty() || a.customer == b.customer);
}

struct Window {
  std::size_t begin;
  std::size_t end;  // inclusive
};

Window window_for(const Trace& t, std::size_t signal, const RunData& run) {
  std::size_t begin = 0;
  for (std::size_t i = signal + 1; i-- > 0;) {
    const auto& e = t[i];
    if (e.kind == EventKind::Send && e.actor == run.customer && is_request_label(e.label)) {
      begin = i;
      break;
    }
  }
  std::size_t end = t.empty() ? 0 : t.size() - 1;
  for (std::size_t i = signal; i < t.size(); ++i) {
    if (!is_run_end(t[i].kind)) continue;
    const auto r = run_of(t[i]);
    if (r && r->n1 && run.n1 && *r->n1 == *run.n1) {
      end = i;
      break;
    }
  }
  return {begin, end};
}

using Sequence = std::vector<std::string>;

bool intended_order(const Sequence& s) {
  static const std::array<std::string, 3> kMiddle = {"U0Deliver", "Limited", "SwitchChallenge"};
  if (s.size() == 3) {
    return is_request_label(s[0]) && std::find(kMiddle.begin(), kMiddle.end(), s[1]) != kMiddle.end() &&
           s[2] == "ChallengeResp";
  }
  if (s.size() == 2) {
    return (s[0] == "JoinFwd" && s[1] == "TicketGrant") || (s[0] == "SwitchFwd" && s[1] == "ReGrant");
  }
  return false;
}

bool between(const TraceEvent& e, const std::string& a, const std::string& b) {
  return (e.actor == a && e.peer == b) || (e.actor == b && e.peer == a);
}

bool synchronised(const Trace& t, Window w, const std::string& x, const std::string& y) {
  Sequence sends;
  for (std::size_t i = w.begin; i <= w.end && i < t.size(); ++i) {
    const auto& e = t[i];
    if (!between(e, x, y)) continue;
    if (e.kind == EventKind::Send) {
      sends.push_back(e.label);
    } else if (e.kind == EventKind::Receive) {
      if (e.origin != e.peer) return false;
      bool sent = false;
      for (std::size_t j = i; j-- > 0;) {
        const auto& s = t[j];
        if (s.kind == EventKind::Send && s.actor == e.peer && s.peer == e.actor && s.label == e.label &&
            s.payload == e.payload) {
          sent = true;
          break;
        }
      }
      if (!sent) return false;
    }
  }
  return intended_order(sends);
}

}  // namespace

std::string_view to_string(ClaimKind k) {
  switch (k) {
    case ClaimKind::Precedes: return "Precedes";
    case ClaimKind::Aliveness: return "Aliveness";
    case ClaimKind::WeakAgreement: return "WeakAgreement";
    case ClaimKind::NonInjAgreement: return "NonInjAgreement";
    case ClaimKind::NonInjSynchronization: return "NonInjSynchronization";
  }
  return "?";
}

Verdict check_precedes(const Trace& trace, const EventPattern& conf, const EventPattern& auth) {
  Verdict v;
  v.claim.kind = ClaimKind::Precedes;
  for (std::size_t a = 0; a < trace.size(); ++a) {
    const auto& ae = trace[a];
    if (!matches(ae, auth)) continue;
    ++v.runs_checked;
    const auto ar = run_of(ae);
    bool ok = ar && ar->n1 && ae.origin == ae.peer;
    if (ok) {
      ok = false;
      for (std::size_t c = 0; c < a; ++c) {
        const auto& ce = trace[c];
        if (!matches(ce, conf) || ce.actor != ae.peer || ce.peer != ae.actor) continue;
        const auto cr = run_of(ce);
        if (cr && cr->n1 && *cr->n1 == *ar->n1) {
          ok = true;
          break;
        }
      }
    }
    if (!ok) {
      v.holds = false;
      v.witness = a;
      return v;
    }
  }
  return v;
}

Verdict check_claim(const Trace& t, const Claim& claim) {
  Verdict v{claim, true, std::nullopt, 0};
  if (claim.kind == ClaimKind::Precedes) {
    auto p = check_precedes(t, {EventKind::Conf, claim.responder, claim.initiator},
                            {EventKind::Auth, claim.initiator, claim.responder});
    p.claim = claim;
    return p;
  }
  const auto& x = claim.initiator;
  const auto& y = claim.responder;
  const int level = static_cast<int>(claim.kind);

  for (std::size_t s = 0; s < t.size(); ++s) {
    const auto& sig = t[s];
    if (!is_signal(sig.kind) || sig.actor != x || sig.peer != y) continue;
    const auto run = run_of(sig);
    if (!run || !run->n1) continue;
    if (claim.data && run->to_term() != *claim.data) continue;
    ++v.runs_checked;
    const Window w = window_for(t, s, *run);

    bool alive = false, weak = false, agreed = false;
    for (std::size_t i = w.begin; i <= w.end && i < t.size(); ++i) {
      const auto& e = t[i];
      if (e.actor != y) continue;
      if (e.kind == EventKind::Send) alive = true;
      if (e.peer == x) weak = true;
      if (is_signal(e.kind) && e.peer == x) {
        const auto r = run_of(e);
        if (r && same_run(*r, *run)) agreed = true;
      }
    }
    bool ok = alive;
    if (level >= static_cast<int>(ClaimKind::WeakAgreement)) ok = ok && weak;
    if (level >= static_cast<int>(ClaimKind::NonInjAgreement)) ok = ok && agreed;
    if (level >= static_cast<int>(ClaimKind::NonInjSynchronization)) ok = ok && synchronised(t, w, x, y);
    if (!ok) {
      v.holds = false;
      v.witness = s;
      return v;
    }
  }
  return v;
}

std::vector<Verdict> check_all_claims(const Trace& trace, const std::string& claimant, const std::string& partner) {
  std::vector<Verdict> out;
  for (auto k : {ClaimKind::Aliveness, ClaimKind::WeakAgreement, ClaimKind::NonInjAgreement,
                 ClaimKind::NonInjSynchronization}) {
    out.push_back(check_claim(trace, Claim{k, claimant, partner, std::nullopt}));
  }
  return out;
}

}  // namespace tap
