#include "tap/keychain.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "tap/error.hpp"

namespace tap {

namespace {

std::string value_key(ByteView v) { return {v.begin(), v.end()}; }

Value32 to_value32(ByteView b) {
  Value32 v{};
  std::copy_n(b.begin(), std::min(b.size(), v.size()), v.begin());
  return v;
}

}  // namespace

void KeyMsg::validate() const {
  if (length == 0) throw Error(Errc::ZeroLength, "key chain length L must be >= 1");
  if (duration == 0) throw Error(Errc::OutOfRange, "validity duration T_d must be > 0");
}

SecretTable SecretTable::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::ConfigParse, "cannot open secret table " + file.string());
  SecretTable table;
  std::string line;
  while (std::getline(in, line)) {
    auto end = line.find('#');
    if (end != std::string::npos) line.resize(end);
    std::string hex;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) hex.push_back(c);
    if (hex.empty()) continue;
    auto bytes = from_hex(hex);
    if (bytes.size() != kDigestSize) throw Error(Errc::ConfigParse, "secret table entries must be 32 bytes");
    table.entries.push_back(to_value32(bytes));
  }
  if (table.entries.empty()) throw Error(Errc::EmptyTable, "secret table file has no entries");
  return table;
}

Value32 lookup(const SecretTable& table, std::uint64_t index, std::uint64_t offset) {
  if (table.entries.empty()) throw Error(Errc::EmptyTable, "lookup on empty secret table");
  const std::uint64_t n = table.entries.size();
  // (I + O) mod n without overflow.
  return table.entries[((index % n) + (offset % n)) % n];
}

Digest commitment_generator(const SecretTable& table, const KeyMsg& msg) {
  const auto selected = lookup(table, msg.index, msg.offset);
  const auto with_duration = xor_combine(selected, encode_u64(msg.duration));
  return hash(xor_combine(with_duration, msg.nonce));
}

Digest chain_step(const Digest& g) {
  Bytes input;
  input.reserve(1 + kDigestSize);
  input.push_back(0x46);
  input.insert(input.end(), g.bytes.begin(), g.bytes.end());
  return hash(input);
}

std::vector<Digest> extend_chain(const Digest& g0, std::uint32_t length) {
  if (length == 0) throw Error(Errc::ZeroLength, "chain length must be >= 1");
  std::vector<Digest> out;
  out.reserve(length + 1);
  out.push_back(g0);
  for (std::uint32_t i = 0; i < length; ++i) out.push_back(chain_step(out.back()));
  return out;
}

KeyChain derive_keychain(std::span<const Digest> generators, const NonceValue& n0, Seconds interval_len) {
  if (generators.size() < 2) throw Error(Errc::ZeroLength, "need at least G_0 and G_1");
  KeyChain chain;
  chain.generators_.assign(generators.begin(), generators.end());
  chain.n0_ = n0;
  chain.interval_len_ = interval_len;
  chain.keys_.reserve(generators.size());
  chain.index_vector_.reserve(generators.size());
  for (std::size_t i = 0; i < generators.size(); ++i) {
    const auto k = xor_combine(hash(generators[i]).view(), n0);
    chain.keys_.push_back(Key::from(k, KeyKind::TimeBased));
    const auto v = to_value32(xor_combine(hash(encode_u64(i)).view(), n0));
    if (!chain.positions_.emplace(value_key(v), i).second) {
      throw Error(Errc::IndexCollision, "duplicate index value at position " + std::to_string(i));
    }
    chain.index_vector_.push_back(v);
  }
  return chain;
}

KeyChain build_keychain(const SecretTable& table, const KeyMsg& msg) {
  msg.validate();
  const auto g0 = commitment_generator(table, msg);
  const auto gens = extend_chain(g0, msg.length);
  return derive_keychain(gens, msg.nonce, msg.interval_len());
}

std::optional<std::size_t> KeyChain::position_of(const Value32& v) const {
  auto it = positions_.find(value_key(v));
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

Bytes KeyChain::export_blob() const {
  Bytes out{'T', 'A', 'P', 'K', 1};
  const auto l = length();
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(l >> shift));
  const auto bits = std::bit_cast<std::uint64_t>(interval_len_);
  const auto enc = encode_u64(bits);
  out.insert(out.end(), enc.begin(), enc.end());
  out.insert(out.end(), n0_.begin(), n0_.end());
  for (const auto& g : generators_) out.insert(out.end(), g.bytes.begin(), g.bytes.end());
  return out;
}

KeyChain KeyChain::import_blob(ByteView blob) {
  constexpr std::size_t kHeader = 4 + 1 + 4 + 8 + 16;
  if (blob.size() < kHeader || blob[0] != 'T' || blob[1] != 'A' || blob[2] != 'P' || blob[3] != 'K') {
    throw Error(Errc::Malformed, "not a keychain blob");
  }
  if (blob[4] != 1) throw Error(Errc::Malformed, "unsupported keychain blob version");
  std::uint32_t l = 0;
  for (int i = 5; i < 9; ++i) l = (l << 8) | blob[static_cast<std::size_t>(i)];
  std::uint64_t bits = 0;
  for (int i = 9; i < 17; ++i) bits = (bits << 8) | blob[static_cast<std::size_t>(i)];
  NonceValue n0{};
  std::copy_n(blob.begin() + 17, n0.size(), n0.begin());
  const std::size_t expected = kHeader + (static_cast<std::size_t>(l) + 1) * kDigestSize;
  if (blob.size() != expected) throw Error(Errc::Malformed, "keychain blob length mismatch");
  std::vector<Digest> gens;
  gens.reserve(l + 1);
  for (std::size_t i = 0; i <= l; ++i) gens.push_back(Digest::from(blob.subspan(kHeader + i * kDigestSize, kDigestSize)));
  return derive_keychain(gens, n0, std::bit_cast<double>(bits));
}

std::uint32_t interval_index(Seconds now, Seconds chain_start, Seconds interval_len, std::uint32_t length) {
  if (now < chain_start) throw Error(Errc::BeforeStart, "time precedes chain start");
  const double k = std::floor((now - chain_start) / interval_len);
  if (k >= static_cast<double>(length)) return length;
  return static_cast<std::uint32_t>(k);
}

SessionKey derive_session_key(const Key& interval_key, const Digest& customer_key_digest,
                              std::uint32_t issued_interval, std::uint32_t length) {
  if (issued_interval >= length) throw Error(Errc::OutOfRange, "cannot issue a session key in an expired chain");
  const auto d = hash(concat(interval_key.view(), customer_key_digest.view()));
  return SessionKey{Key::from(d.view(), KeyKind::Session), length - issued_interval, issued_interval};
}

SessionKey derive_session_key(const Key& interval_key, const Key& customer_key, std::uint32_t issued_interval,
                              std::uint32_t length) {
  return derive_session_key(interval_key, hash(customer_key.view()), issued_interval, length);
}

Key reauth_session_key(const Key& customer_key, const Value32& index_value) {
  return Key::from(hash(concat(customer_key.view(), index_value)).view(), KeyKind::Session);
}

Term to_term(const SessionKey& k) {
  return Term::cat({key_term(k.key), Term::num(k.issued_interval), Term::num(k.valid_intervals)});
}

SessionKey session_key_from_term(const Term& t) {
  if (!t.is(Term::Tag::Cat) || t.parts().size() != 3) throw Error(Errc::Malformed, "session key term");
  const auto p = t.parts();
  return SessionKey{Key::from(p[0].data(), KeyKind::Session), static_cast<std::uint32_t>(p[2].number()),
                    static_cast<std::uint32_t>(p[1].number())};
}

}  // namespace tap
