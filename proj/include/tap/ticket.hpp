#pragma once

// Two-segment authentication tickets and the three time-based key retrieval
// modes.
//
//   info segment      seal(K_i, cat(C_k, K_S, V_i, Profile, H_head))
//   retrieval, Mode1  seal(K_G, cat(C_k, V_i, H(G_i), H(K_C)))
//   retrieval, Mode2  seal(K_G, cat(C_k, T_t, V_i, H(G_i), H(K_C)))
//   retrieval, Mode3  seal(K_G, cat(C_k, V_i, H_head, cat(siblings...), H(K_C)))
//
// H_head is the index tree head in Mode3 and H(encoding of
// cat(C_k, K_S, V_i, Profile)) otherwise. T_t is carried as the bit pattern of
// the issuer's clock reading (IEEE-754 double).

#include <optional>
#include <vector>

#include "tap/keychain.hpp"

namespace tap {

/// Power-of-two binary hash tree over the index vector. Padding leaves are
/// 32 zero bytes; parent = H(left || right).
class IndexTree {
 public:
  const Digest& head() const { return levels_.back().front(); }
  std::size_t depth() const { return levels_.size() - 1; }
  std::size_t leaf_count() const { return levels_.front().size(); }
  /// levels()[0] are the leaves, levels().back() holds only the head.
  const std::vector<std::vector<Digest>>& levels() const { return levels_; }

 private:
  friend IndexTree build_index_tree(std::span<const Value32>);
  std::vector<std::vector<Digest>> levels_;
};

IndexTree build_index_tree(std::span<const Value32> index_vector);

/// Bottom-up sibling digests for leaf `i`. Throws Error(OutOfRange).
std::vector<Digest> sibling_path(const IndexTree& tree, std::size_t i);

/// Folds `leaf` with `path`; bit k of `position` set means the running node
/// is a right child at level k. Costs path.size() hashes.
Digest fold_path(const Value32& leaf, std::span<const Digest> path, std::size_t position);

/// Running clock-offset bound used to window Mode2 searches.
struct DriftEstimator {
  Seconds epsilon = 0;       // seconds, always >= 0
  Seconds duration = 0;      // T_d
  Seconds chain_start = 0;   // verifier-local clock at chain start
  Seconds last_updated = 0;

  /// epsilon_0 = |T_c(verifier) - T_c(leader)| at Key_MSG receipt.
  static DriftEstimator initial(Seconds verifier_clock, Seconds leader_clock, Seconds duration,
                                Seconds chain_start);
};

std::size_t retrieve_mode1(const Value32& claimed, const KeyChain& chain);

struct Mode2Result {
  std::size_t index;
  DriftEstimator updated;
};

/// Windowed scan around the issuance position implied by T_t. The estimator
/// is returned updated on success; on Error(NotInWindow) the caller's copy is
/// untouched.
Mode2Result retrieve_mode2(Seconds issued_at, Seconds verifier_now, const DriftEstimator& est,
                           const KeyChain& chain, const Value32& claimed);

/// Verifies `path` against the local tree with exactly depth() hashes and
/// returns the leaf position. Errors: HeadMismatch, UnknownIndexValue.
std::size_t retrieve_mode3(const Value32& claimed, std::span<const Digest> path, const Digest& head,
                           const IndexTree& local);

struct Ticket {
  Term info;
  Term retrieval;
  RetrievalMode mode = RetrievalMode::Mode1;

  /// cat(num(mode), info, retrieval)
  Term to_term() const;
  static Ticket from_term(const Term& t);

  /// "TAPT" | u8 version(1) | u8 mode | u32 len | info encoding | u32 len |
  /// retrieval encoding.
  Bytes to_binary() const;
  static Ticket from_binary(ByteView b);

  bool operator==(const Ticket& o) const {
    return mode == o.mode && info == o.info && retrieval == o.retrieval;
  }
};

struct TicketRequest {
  RetrievalMode mode = RetrievalMode::Mode1;
  Term customer = Term::id("");
  SessionKey session;
  std::size_t interval = 0;      // i
  Value32 index_value{};         // V_i
  Term profile = Term::atom("");
  Digest customer_key_digest;    // H(K_C)
  Digest generator_digest;       // H(G_i), Mode1/Mode2
  std::optional<Seconds> issued_at;  // T_t, Mode2
  const IndexTree* tree = nullptr;   // Mode3
};

/// Throws Error(MissingExtras) when Mode2 lacks T_t or Mode3 lacks the tree.
Ticket issue_ticket(const TicketRequest& req, const Key& interval_key, const Key& group_key);

struct VerifiedTicket {
  Term customer = Term::id("");
  SessionKey session;
  Term profile = Term::atom("");
  std::size_t index;
  Value32 index_value;
};

/// Opens the retrieval segment with K_G, retrieves the interval key, opens the
/// info segment and cross-checks both halves. The drift estimator is updated
/// only when the whole verification succeeds.
/// Errors: WrongGroupKey, RetrievalFailed (cause = retrieval error),
/// SegmentMismatch, Malformed.
VerifiedTicket verify_ticket(const Ticket& ticket, const KeyChain& chain, const IndexTree& tree,
                             const Key& group_key, DriftEstimator& est, Seconds verifier_now);

/// Customer named in the retrieval segment; only needs the group key.
Term retrieval_customer(const Ticket& ticket, const Key& group_key);

}  // namespace tap
