#pragma once

// Symbolic message universe shared by every protocol role.
//
// Terms are immutable and carry their canonical serialization, so equality,
// ordering and hashing are byte comparisons on that encoding. Encryption is
// modelled as key-tagged sealed boxes: Sealed(hash(key), payload). A box can
// only be opened by a key whose tag matches (or, for registered public-key
// pairs, by the private half).
//
// Wire encoding (all integers big-endian):
//   Atom   0x01 | u32 len | utf8 label
//   Id     0x02 | u32 len | utf8 party name
//   Nonce  0x03 | u32 len | utf8 tag | 16 value bytes
//   Num    0x04 | u64
//   Bytes  0x05 | u32 len | bytes
//   Cat    0x06 | u32 count | encoding of each part
//   Sealed 0x07 | 32-byte key tag | encoding of payload

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tap {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using NonceValue = std::array<std::uint8_t, 16>;

inline constexpr std::size_t kDigestSize = 32;

struct Digest {
  std::array<std::uint8_t, kDigestSize> bytes{};

  ByteView view() const { return bytes; }
  Bytes to_bytes() const { return {bytes.begin(), bytes.end()}; }
  static Digest from(ByteView b);  // requires b.size() == 32

  auto operator<=>(const Digest&) const = default;
};

/// SHA-256. Counted as one hash operation.
Digest hash(ByteView data);
inline Digest hash(const Digest& d) { return hash(d.view()); }

/// SHA-256 without touching the operation counters. Used for seal tags and
/// bookkeeping fingerprints, never for protocol computations.
Digest digest_uncounted(ByteView data);

/// Bytewise XOR; the shorter operand is right-padded with zeros.
Bytes xor_combine(ByteView a, ByteView b);

Bytes encode_u64(std::uint64_t v);
Bytes concat(ByteView a, ByteView b);

enum class KeyKind : std::uint8_t { TimeBased, Group, Session, PublicPair, Partial };

struct Key {
  std::array<std::uint8_t, kDigestSize> bytes{};
  KeyKind kind = KeyKind::TimeBased;

  ByteView view() const { return bytes; }
  static Key from(ByteView b, KeyKind kind);  // requires b.size() == 32

  // Kind is metadata only.
  bool operator==(const Key& o) const { return bytes == o.bytes; }
};

/// Tag identifying which key sealed a box: hash(key bytes), uncounted.
Digest key_tag(const Key& k);
Digest key_tag(ByteView key_bytes);

class Term;

namespace term {
struct Atom {
  std::string label;
};
struct Id {
  std::string party;
};
struct Nonce {
  std::string tag;
  NonceValue value{};
};
struct Num {
  std::uint64_t value = 0;
};
struct Blob {
  Bytes value;
};
struct Cat;
struct Sealed;
}  // namespace term

class Term {
 public:
  enum class Tag : std::uint8_t { Atom = 1, Id = 2, Nonce = 3, Num = 4, Bytes = 5, Cat = 6, Sealed = 7 };

  static Term atom(std::string label);
  static Term id(std::string party);
  static Term nonce(std::string tag, const NonceValue& value);
  static Term num(std::uint64_t value);
  static Term bytes(Bytes value);
  static Term bytes(ByteView value) { return bytes(Bytes(value.begin(), value.end())); }
  static Term cat(std::vector<Term> parts);
  static Term sealed(const Digest& key_tag, Term payload);

  /// Inverse of encoding(); throws Error(Malformed) on bad input.
  static Term deserialize(ByteView encoded);

  Tag tag() const;
  const Bytes& encoding() const;
  std::size_t depth() const;

  const std::string& text() const;          // Atom label, Id party, Nonce tag
  const NonceValue& nonce_value() const;    // Nonce
  std::uint64_t number() const;             // Num
  const Bytes& data() const;                // Bytes
  std::span<const Term> parts() const;      // Cat
  const Digest& seal_tag() const;           // Sealed
  const Term& payload() const;              // Sealed

  bool is(Tag t) const { return tag() == t; }

  bool operator==(const Term& o) const { return encoding() == o.encoding(); }
  std::strong_ordering operator<=>(const Term& o) const;

 private:
  struct Node;
  explicit Term(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

namespace term {
struct Cat {
  std::vector<Term> parts;
};
struct Sealed {
  Digest key_tag;
  Term payload;
};
}  // namespace term

struct TermHash {
  std::size_t operator()(const Term& t) const noexcept;
};

/// Nonce + 1: the 16-byte value read as a big-endian integer, modulo 2^128.
NonceValue increment(const NonceValue& v);
Term nonce_successor(const Term& nonce);

/// Key registry for public-key pairs. A box sealed with a registered public
/// half opens only with the matching private half.
class KeyRegistry {
 public:
  void register_pair(const Key& public_half, const Key& private_half);
  bool is_public(const Digest& tag) const;
  const Digest* private_for(const Digest& public_tag) const;

 private:
  std::map<Digest, Digest> pairs_;
};

/// Counted as one seal operation.
Term seal(const Key& key, Term payload);

/// Returns the payload iff `key` may open `box`. Errors: NotSealed, WrongKey.
/// Counted as one open operation.
const Term& open(const Key& key, const Term& box, const KeyRegistry* registry = nullptr);

/// Opening attempt with raw bytes (intruder deduction). Uncounted.
bool can_open(ByteView key_bytes, const Term& box, const KeyRegistry* registry);

std::string to_hex(ByteView b);
Bytes from_hex(std::string_view hex);

/// Human-readable rendering for reports, e.g. cat(id:C1,nonce:N0#ab12..).
std::string render(const Term& t);

/// Uncounted fingerprint of a term's encoding.
inline Digest fingerprint(const Term& t) { return digest_uncounted(t.encoding()); }

inline Term key_term(const Key& k) { return Term::bytes(k.view()); }
inline Term digest_term(const Digest& d) { return Term::bytes(d.view()); }

}  // namespace tap
