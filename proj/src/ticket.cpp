#include "tap/ticket.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "tap/counters.hpp"
#include "tap/error.hpp"

namespace tap {

namespace {

// Adds the hashes spent while alive to OpCounts::retrieval_hash.
class RetrievalTally {
 public:
  RetrievalTally() : start_(current()) {}
  ~RetrievalTally() {
    if (auto* s = counters::active()) s->retrieval_hash += s->hash - start_;
  }
  RetrievalTally(const RetrievalTally&) = delete;
  RetrievalTally& operator=(const RetrievalTally&) = delete;

 private:
  static std::uint64_t current() {
    auto* s = counters::active();
    return s ? s->hash : 0;
  }
  std::uint64_t start_;
};

Digest leaf_digest(const Value32& v) {
  Digest d;
  d.bytes = v;
  return d;
}

Digest hash_pair(const Digest& left, const Digest& right) { return hash(concat(left.view(), right.view())); }

Value32 value_of(const Term& t) {
  const auto& b = t.data();
  if (b.size() != kDigestSize) throw Error(Errc::Malformed, "index value must be 32 bytes");
  Value32 v;
  std::copy(b.begin(), b.end(), v.begin());
  return v;
}

Term value_term(const Value32& v) { return Term::bytes(ByteView(v)); }

std::uint64_t seconds_bits(Seconds s) { return std::bit_cast<std::uint64_t>(s); }
Seconds seconds_from_bits(std::uint64_t b) { return std::bit_cast<Seconds>(b); }

Digest info_head(const Term& customer, const Term& session, const Term& index_value, const Term& profile) {
  return hash(Term::cat({customer, session, index_value, profile}).encoding());
}

}  // namespace

// ---------------------------------------------------------------------------
// Index tree

IndexTree build_index_tree(std::span<const Value32> index_vector) {
  if (index_vector.empty()) throw Error(Errc::ZeroLength, "index tree needs at least one leaf");
  std::size_t leaves = 2;
  while (leaves < index_vector.size()) leaves *= 2;

  IndexTree tree;
  std::vector<Digest> level;
  level.reserve(leaves);
  for (const auto& v : index_vector) level.push_back(leaf_digest(v));
  level.resize(leaves, Digest{});
  tree.levels_.push_back(std::move(level));

  while (tree.levels_.back().size() > 1) {
    const auto& below = tree.levels_.back();
    std::vector<Digest> above;
    above.reserve(below.size() / 2);
    for (std::size_t i = 0; i < below.size(); i += 2) above.push_back(hash_pair(below[i], below[i + 1]));
    tree.levels_.push_back(std::move(above));
  }
  return tree;
}

std::vector<Digest> sibling_path(const IndexTree& tree, std::size_t i) {
  if (i >= tree.leaf_count()) throw Error(Errc::OutOfRange, "leaf index outside tree");
  std::vector<Digest> path;
  path.reserve(tree.depth());
  for (std::size_t level = 0; level < tree.depth(); ++level) {
    path.push_back(tree.levels()[level][i ^ 1]);
    i >>= 1;
  }
  return path;
}

Digest fold_path(const Value32& leaf, std::span<const Digest> path, std::size_t position) {
  Digest node = leaf_digest(leaf);
  for (const auto& sibling : path) {
    node = (position & 1) ? hash_pair(sibling, node) : hash_pair(node, sibling);
    position >>= 1;
  }
  return node;
}

// ---------------------------------------------------------------------------
// Retrieval

DriftEstimator DriftEstimator::initial(Seconds verifier_clock, Seconds leader_clock, Seconds duration,
                                       Seconds chain_start) {
  return DriftEstimator{std::abs(verifier_clock - leader_clock), duration, chain_start, verifier_clock};
}

std::size_t retrieve_mode1(const Value32& claimed, const KeyChain& chain) {
  RetrievalTally tally;
  if (auto pos = chain.position_of(claimed)) return *pos;
  throw Error(Errc::UnknownIndexValue, "index value not in local vector");
}

Mode2Result retrieve_mode2(Seconds issued_at, Seconds verifier_now, const DriftEstimator& est,
                           const KeyChain& chain, const Value32& claimed) {
  RetrievalTally tally;
  const Seconds len = chain.interval_len();
  const auto last = static_cast<double>(chain.length());

  // Issuance position relative to the local chain start: the verifier's own
  // elapsed time minus the ticket's age.
  const Seconds elapsed = verifier_now - est.chain_start;
  const Seconds age = verifier_now - issued_at;
  const Seconds center = elapsed - age;

  const double lo = std::max(0.0, std::floor((center - est.epsilon) / len));
  const double hi = std::min(last, std::floor((center + est.epsilon) / len));
  if (lo > hi) throw Error(Errc::NotInWindow, "search window outside the chain");

  const auto& values = chain.index_vector();
  for (auto i = static_cast<std::size_t>(lo); i <= static_cast<std::size_t>(hi); ++i) {
    if (values[i] != claimed) continue;
    const Seconds current = std::abs(center - static_cast<double>(i) * len);
    const double w1 = std::clamp((verifier_now + issued_at) / est.duration, 0.0, 1.0);
    const double w0 = 1.0 - w1;
    DriftEstimator next = est;
    next.epsilon = std::max(0.0, w0 * est.epsilon + w1 * current);
    next.last_updated = verifier_now;
    return {i, next};
  }
  throw Error(Errc::NotInWindow, "index value not found inside the drift window");
}

std::size_t retrieve_mode3(const Value32& claimed, std::span<const Digest> path, const Digest& head,
                           const IndexTree& local) {
  RetrievalTally tally;
  if (head != local.head()) throw Error(Errc::HeadMismatch, "ticket tree head differs from local head");
  if (path.size() != local.depth()) throw Error(Errc::HeadMismatch, "path length differs from tree depth");

  // Walk down from the head; at each level the appended sibling identifies
  // the child to ignore, the other one is followed.
  const auto& levels = local.levels();
  std::size_t pos = 0;
  for (std::size_t level = local.depth(); level > 0; --level) {
    const auto& children = levels[level - 1];
    const auto& sibling = path[level - 1];
    if (sibling == children[2 * pos + 1]) {
      pos = 2 * pos;
    } else if (sibling == children[2 * pos]) {
      pos = 2 * pos + 1;
    } else {
      throw Error(Errc::HeadMismatch, "path node not in local tree");
    }
  }

  if (levels[0][pos].bytes != claimed) {
    const bool known = std::any_of(levels[0].begin(), levels[0].end(),
                                   [&](const Digest& d) { return d.bytes == claimed; }) &&
                       claimed != Value32{};
    if (known) throw Error(Errc::HeadMismatch, "path does not lead to the claimed leaf");
    throw Error(Errc::UnknownIndexValue, "index value not in local tree");
  }
  if (claimed == Value32{}) throw Error(Errc::UnknownIndexValue, "padding leaf is not an index value");

  if (fold_path(claimed, path, pos) != local.head()) throw Error(Errc::HeadMismatch, "path does not fold to head");
  return pos;
}

// ---------------------------------------------------------------------------
// Tickets

Term Ticket::to_term() const { return Term::cat({Term::num(static_cast<std::uint64_t>(mode)), info, retrieval}); }

Ticket Ticket::from_term(const Term& t) {
  if (!t.is(Term::Tag::Cat) || t.parts().size() != 3 || !t.parts()[0].is(Term::Tag::Num)) {
    throw Error(Errc::Malformed, "ticket term");
  }
  const auto m = t.parts()[0].number();
  if (m < 1 || m > 3) throw Error(Errc::Malformed, "ticket mode");
  return Ticket{t.parts()[1], t.parts()[2], static_cast<RetrievalMode>(m)};
}

Bytes Ticket::to_binary() const {
  Bytes out{'T', 'A', 'P', 'T', 1, static_cast<std::uint8_t>(mode)};
  for (const Term* seg : {&info, &retrieval}) {
    const auto& e = seg->encoding();
    const auto n = static_cast<std::uint32_t>(e.size());
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(n >> shift));
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

Ticket Ticket::from_binary(ByteView b) {
  if (b.size() < 6 || b[0] != 'T' || b[1] != 'A' || b[2] != 'P' || b[3] != 'T') {
    throw Error(Errc::Malformed, "not a ticket blob");
  }
  if (b[4] != 1) throw Error(Errc::Malformed, "unsupported ticket version");
  if (b[5] < 1 || b[5] > 3) throw Error(Errc::Malformed, "ticket mode");
  std::size_t pos = 6;
  auto segment = [&] {
    if (b.size() - pos < 4) throw Error(Errc::Malformed, "truncated ticket");
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n = (n << 8) | b[pos++];
    if (b.size() - pos < n) throw Error(Errc::Malformed, "truncated ticket");
    auto t = Term::deserialize(b.subspan(pos, n));
    pos += n;
    return t;
  };
  Term info = segment();
  Term retrieval = segment();
  if (pos != b.size()) throw Error(Errc::Malformed, "trailing bytes after ticket");
  return Ticket{std::move(info), std::move(retrieval), static_cast<RetrievalMode>(b[5])};
}

Ticket issue_ticket(const TicketRequest& req, const Key& interval_key, const Key& group_key) {
  const Term session = to_term(req.session);
  const Term index_value = value_term(req.index_value);
  const Term kc = digest_term(req.customer_key_digest);

  Term retrieval_payload = Term::atom("");
  Digest head;
  switch (req.mode) {
    case RetrievalMode::Mode1:
      head = info_head(req.customer, session, index_value, req.profile);
      retrieval_payload = Term::cat({req.customer, index_value, digest_term(req.generator_digest), kc});
      break;
    case RetrievalMode::Mode2:
      if (!req.issued_at) throw Error(Errc::MissingExtras, "Mode2 ticket needs the issue time");
      head = info_head(req.customer, session, index_value, req.profile);
      retrieval_payload = Term::cat({req.customer, Term::num(seconds_bits(*req.issued_at)), index_value,
                                     digest_term(req.generator_digest), kc});
      break;
    case RetrievalMode::Mode3: {
      if (req.tree == nullptr) throw Error(Errc::MissingExtras, "Mode3 ticket needs the index tree");
      head = req.tree->head();
      std::vector<Term> siblings;
      for (const auto& d : sibling_path(*req.tree, req.interval)) siblings.push_back(digest_term(d));
      retrieval_payload =
          Term::cat({req.customer, index_value, digest_term(head), Term::cat(std::move(siblings)), kc});
      break;
    }
  }

  Term info = seal(interval_key, Term::cat({req.customer, session, index_value, req.profile, digest_term(head)}));
  Term retrieval = seal(group_key, std::move(retrieval_payload));
  return Ticket{std::move(info), std::move(retrieval), req.mode};
}

namespace {

const Term& open_retrieval(const Ticket& ticket, const Key& group_key) {
  try {
    return open(group_key, ticket.retrieval);
  } catch (const Error& e) {
    if (e.code() == Errc::WrongKey) throw Error(Errc::WrongGroupKey, "retrieval segment not sealed with this group key");
    throw;
  }
}

std::span<const Term> expect_parts(const Term& t, std::size_t n, const char* what) {
  if (!t.is(Term::Tag::Cat) || t.parts().size() != n) throw Error(Errc::Malformed, what);
  return t.parts();
}

}  // namespace

Term retrieval_customer(const Ticket& ticket, const Key& group_key) {
  const Term& payload = open_retrieval(ticket, group_key);
  if (!payload.is(Term::Tag::Cat) || payload.parts().empty()) throw Error(Errc::Malformed, "retrieval segment");
  return payload.parts()[0];
}

VerifiedTicket verify_ticket(const Ticket& ticket, const KeyChain& chain, const IndexTree& tree,
                             const Key& group_key, DriftEstimator& est, Seconds verifier_now) {
  const Term& retrieval = open_retrieval(ticket, group_key);
  const bool mode3 = ticket.mode == RetrievalMode::Mode3;
  const std::size_t arity = ticket.mode == RetrievalMode::Mode1 ? 4 : 5;
  const auto rp = expect_parts(retrieval, arity, "retrieval segment shape");
  const Term& customer = rp[0];
  const Term& kc = rp[arity - 1];
  const Term& generator = rp[arity - 2];

  std::size_t index = 0;
  std::optional<DriftEstimator> updated;
  std::optional<Value32> claimed;
  try {
    switch (ticket.mode) {
      case RetrievalMode::Mode1:
        claimed = value_of(rp[1]);
        index = retrieve_mode1(*claimed, chain);
        break;
      case RetrievalMode::Mode2: {
        if (!rp[1].is(Term::Tag::Num)) throw Error(Errc::Malformed, "Mode2 issue time");
        claimed = value_of(rp[2]);
        auto r = retrieve_mode2(seconds_from_bits(rp[1].number()), verifier_now, est, chain, *claimed);
        index = r.index;
        updated = r.updated;
        break;
      }
      case RetrievalMode::Mode3: {
        claimed = value_of(rp[1]);
        std::vector<Digest> path;
        if (!rp[3].is(Term::Tag::Cat)) throw Error(Errc::Malformed, "sibling list");
        for (const auto& s : rp[3].parts()) path.push_back(Digest::from(s.data()));
        index = retrieve_mode3(*claimed, path, Digest::from(rp[2].data()), tree);
        break;
      }
    }
  } catch (const Error& e) {
    if (e.code() == Errc::Malformed) throw;
    throw Error(Errc::RetrievalFailed, e.what(), e.code());
  }

  if (!mode3) {
    // H(G_i) in the ticket must match the local chain: K_i xor N_0 = H(G_i).
    const auto hg = xor_combine(chain.keys()[index].view(), chain.nonce());
    if (!generator.is(Term::Tag::Bytes) || generator.data() != hg) {
      throw Error(Errc::SegmentMismatch, "generator digest differs from local chain");
    }
  }

  const Term* info = nullptr;
  try {
    info = &open(chain.keys()[index], ticket.info);
  } catch (const Error& e) {
    if (e.code() == Errc::NotSealed) throw Error(Errc::Malformed, "info segment not sealed");
    throw Error(Errc::SegmentMismatch, "info segment not sealed with the retrieved interval key");
  }
  const auto ip = expect_parts(*info, 5, "info segment shape");
  if (ip[0] != customer) throw Error(Errc::SegmentMismatch, "customer differs between segments");
  const Value32 v = value_of(ip[2]);
  if (v != chain.index_vector()[index] || (claimed && *claimed != v)) {
    throw Error(Errc::SegmentMismatch, "index value differs between segments");
  }
  const Digest head = Digest::from(ip[4].data());
  if (mode3) {
    if (head != tree.head() || rp[2] != ip[4]) throw Error(Errc::SegmentMismatch, "tree head differs");
  } else if (head != info_head(ip[0], ip[1], ip[2], ip[3])) {
    throw Error(Errc::SegmentMismatch, "info head does not cover the info fields");
  }
  if (!kc.is(Term::Tag::Bytes) || kc.data().size() != kDigestSize) throw Error(Errc::Malformed, "H(K_C) field");

  SessionKey session = session_key_from_term(ip[1]);
  if (updated) est = *updated;
  return VerifiedTicket{customer, std::move(session), ip[3], index, v};
}

}  // namespace tap
