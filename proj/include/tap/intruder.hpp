#pragma once

// Dolev-Yao knowledge of the intruder.
//
// Analysis (projection of pairs, opening of sealed boxes whose key is known)
// is materialised eagerly, so `terms()` is always the analysis closure.
// Synthesis (pairing, sealing with a known key, public constants) is decided
// on demand by `derivable`, bounded by `depth_bound` nesting levels.

#include <cstddef>
#include <set>
#include <span>
#include <vector>

#include "tap/message_algebra.hpp"

namespace tap {

class Knowledge {
 public:
  explicit Knowledge(const KeyRegistry* registry = nullptr, std::size_t depth_bound = 16);

  /// Adds `t` and re-closes under analysis. Knowledge only grows.
  void add(const Term& t);
  void add_all(std::span<const Term> ts);

  bool knows(const Term& t) const { return known_.contains(t); }
  bool derivable(const Term& t) const;

  const std::set<Term>& terms() const { return known_; }
  std::size_t size() const { return known_.size(); }

  std::size_t depth_bound() const { return depth_bound_; }
  void set_depth_bound(std::size_t d) { depth_bound_ = d; }

  /// Deepest term in the analysed set.
  std::size_t max_depth() const;

 private:
  bool derivable(const Term& t, std::size_t depth) const;
  bool can_open_tag(const Digest& box_tag) const;
  void analyse(std::vector<Term> work);

  const KeyRegistry* registry_;
  std::size_t depth_bound_;
  std::set<Term> known_;
  std::set<Digest> key_tags_;   // tags of every known 32-byte string
  std::vector<Term> locked_;    // sealed boxes not yet openable
};

/// Analysis closure of `knowledge`: every term reachable by projection and
/// opening. Synthesised terms are not enumerated (that set is infinite);
/// use Knowledge::derivable for them.
std::set<Term> deduce_closure(const std::set<Term>& knowledge, const KeyRegistry* registry = nullptr);

}  // namespace tap
