#pragma once

#include <cstdint>

namespace tap {

/// Operation tallies collected by the instrumentation hooks in
/// message_algebra. Only protocol-level operations are counted; digests used
/// for seal tags or trace bookkeeping are not.
struct OpCounts {
  std::uint64_t hash = 0;
  std::uint64_t xor_ops = 0;
  std::uint64_t seal = 0;
  std::uint64_t open = 0;
  std::uint64_t modexp = 0;
  // Hashes spent inside ticket key retrieval (subset of `hash`).
  std::uint64_t retrieval_hash = 0;

  OpCounts& operator+=(const OpCounts& o) {
    hash += o.hash;
    xor_ops += o.xor_ops;
    seal += o.seal;
    open += o.open;
    modexp += o.modexp;
    retrieval_hash += o.retrieval_hash;
    return *this;
  }
  friend OpCounts operator+(OpCounts a, const OpCounts& b) { return a += b; }
  friend OpCounts operator-(OpCounts a, const OpCounts& b) {
    a.hash -= b.hash;
    a.xor_ops -= b.xor_ops;
    a.seal -= b.seal;
    a.open -= b.open;
    a.modexp -= b.modexp;
    a.retrieval_hash -= b.retrieval_hash;
    return a;
  }
  bool operator==(const OpCounts&) const = default;
};

namespace counters {

/// Sink for the current thread, or nullptr when nothing is being counted.
OpCounts* active() noexcept;

/// Redirects counting on this thread into `sink` for the lifetime of the
/// scope. Scopes nest; the previous sink is restored on destruction.
class Scope {
 public:
  explicit Scope(OpCounts& sink) noexcept;
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  OpCounts* previous_;
};

inline void count_hash() noexcept {
  if (auto* s = active()) ++s->hash;
}
inline void count_xor() noexcept {
  if (auto* s = active()) ++s->xor_ops;
}
inline void count_seal() noexcept {
  if (auto* s = active()) ++s->seal;
}
inline void count_open() noexcept {
  if (auto* s = active()) ++s->open;
}

}  // namespace counters
}  // namespace tap
