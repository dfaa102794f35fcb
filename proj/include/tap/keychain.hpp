#pragma once

// Keying protocol: Key_MSG parameters, the commitment generator g, the chain
// extension F, per-interval key/index derivation f and the session keys
// derived from chain entries.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <unordered_map>
#include <vector>

#include "tap/message_algebra.hpp"

namespace tap {

using Seconds = double;
using Value32 = std::array<std::uint8_t, kDigestSize>;

enum class RetrievalMode : std::uint8_t { Mode1 = 1, Mode2 = 2, Mode3 = 3 };

/// Key generation arguments broadcast by the group leader.
struct KeyMsg {
  std::uint64_t index = 0;     // I
  std::uint64_t offset = 0;    // O
  std::uint64_t duration = 0;  // T_d, whole seconds
  Seconds sender_clock = 0;    // T_c of the leader at broadcast
  NonceValue nonce{};          // N_0
  std::uint32_t length = 1;    // L
  RetrievalMode mode = RetrievalMode::Mode1;

  Seconds interval_len() const { return static_cast<Seconds>(duration) / length; }
  /// Throws Error(ZeroLength) / Error(OutOfRange) on L = 0 or T_d = 0.
  void validate() const;
};

/// Secret lookup table shared by all legitimate group members.
struct SecretTable {
  std::vector<Value32> entries;

  /// One 64-hex-digit entry per line; blank lines and `#` comments ignored.
  static SecretTable load(const std::filesystem::path& file);
};

/// entries[(I + O) mod |entries|]. Throws Error(EmptyTable).
Value32 lookup(const SecretTable& table, std::uint64_t index, std::uint64_t offset);

/// g: G_0 = H(lookup(I,O) xor encode(T_d) xor N_0).
Digest commitment_generator(const SecretTable& table, const KeyMsg& msg);

/// F(d) = H(0x46 || d). Domain-separated from the bare H used in f and g.
Digest chain_step(const Digest& g);

/// [G_0, F(G_0), ..., F^L(G_0)]. Throws Error(ZeroLength) for L = 0.
std::vector<Digest> extend_chain(const Digest& g0, std::uint32_t length);

/// Immutable chain of generators with the derived time-based keys and index
/// vector. keys[i] = H(G_i) xor N_0, index_vector[i] = H(encode(i)) xor N_0.
class KeyChain {
 public:
  std::uint32_t length() const { return static_cast<std::uint32_t>(generators_.size() - 1); }
  Seconds interval_len() const { return interval_len_; }
  const NonceValue& nonce() const { return n0_; }
  const std::vector<Digest>& generators() const { return generators_; }
  const std::vector<Key>& keys() const { return keys_; }
  const std::vector<Value32>& index_vector() const { return index_vector_; }

  /// Precomputed value -> position map.
  std::optional<std::size_t> position_of(const Value32& v) const;

  /// Binary blob: "TAPK" | u8 version(1) | u32 L | f64 interval_len bits |
  /// 16-byte N_0 | (L+1) x 32-byte generators. Keys and index values are
  /// re-derived on import.
  Bytes export_blob() const;
  static KeyChain import_blob(ByteView blob);

  bool operator==(const KeyChain& o) const {
    return generators_ == o.generators_ && n0_ == o.n0_ && interval_len_ == o.interval_len_;
  }

 private:
  friend KeyChain derive_keychain(std::span<const Digest>, const NonceValue&, Seconds);
  std::vector<Digest> generators_;
  std::vector<Key> keys_;
  std::vector<Value32> index_vector_;
  NonceValue n0_{};
  Seconds interval_len_ = 0;
  std::unordered_map<std::string, std::size_t> positions_;
};

/// f over every generator. Throws Error(ZeroLength) for fewer than two
/// generators and Error(IndexCollision) if two index values coincide.
KeyChain derive_keychain(std::span<const Digest> generators, const NonceValue& n0, Seconds interval_len);

/// g, F and f in sequence; what every group member runs on receipt of Key_MSG.
KeyChain build_keychain(const SecretTable& table, const KeyMsg& msg);

/// min(floor((now - start) / interval_len), L). L means the chain expired.
std::uint32_t interval_index(Seconds now, Seconds chain_start, Seconds interval_len, std::uint32_t length);

struct SessionKey {
  Key key;
  std::uint32_t valid_intervals = 1;
  std::uint32_t issued_interval = 0;

  bool operator==(const SessionKey&) const = default;
};

/// K_S = H(K_i || H(K_C)); valid for the L - issued remaining intervals.
SessionKey derive_session_key(const Key& interval_key, const Key& customer_key, std::uint32_t issued_interval,
                              std::uint32_t length);
/// Same, with H(K_C) already computed by the caller.
SessionKey derive_session_key(const Key& interval_key, const Digest& customer_key_digest,
                              std::uint32_t issued_interval, std::uint32_t length);

/// Re-authentication session key h(K_C || V_i).
Key reauth_session_key(const Key& customer_key, const Value32& index_value);

Term to_term(const SessionKey& k);
SessionKey session_key_from_term(const Term& t);

}  // namespace tap
