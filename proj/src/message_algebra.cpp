#include "tap/message_algebra.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstring>

#include "tap/counters.hpp"
#include "tap/error.hpp"

namespace tap {

namespace {

Digest sha256(ByteView data) {
  Digest d;
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), d.bytes.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != kDigestSize) {
    throw std::runtime_error("EVP_Digest(sha256) failed");
  }
  return d;
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_text(Bytes& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives

Digest Digest::from(ByteView b) {
  if (b.size() != kDigestSize) throw Error(Errc::Malformed, "digest must be 32 bytes");
  Digest d;
  std::copy(b.begin(), b.end(), d.bytes.begin());
  return d;
}

Key Key::from(ByteView b, KeyKind kind) {
  if (b.size() != kDigestSize) throw Error(Errc::Malformed, "key must be 32 bytes");
  Key k;
  std::copy(b.begin(), b.end(), k.bytes.begin());
  k.kind = kind;
  return k;
}

Digest hash(ByteView data) {
  counters::count_hash();
  return sha256(data);
}

Digest digest_uncounted(ByteView data) { return sha256(data); }

Bytes xor_combine(ByteView a, ByteView b) {
  counters::count_xor();
  Bytes out(std::max(a.size(), b.size()), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint8_t x = i < a.size() ? a[i] : 0;
    const std::uint8_t y = i < b.size() ? b[i] : 0;
    out[i] = x ^ y;
  }
  return out;
}

Bytes encode_u64(std::uint64_t v) {
  Bytes out;
  out.reserve(8);
  put_u64(out, v);
  return out;
}

Bytes concat(ByteView a, ByteView b) {
  Bytes out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Digest key_tag(const Key& k) { return sha256(k.view()); }
Digest key_tag(ByteView key_bytes) { return sha256(key_bytes); }

// ---------------------------------------------------------------------------
// Term

struct Term::Node {
  std::variant<term::Atom, term::Id, term::Nonce, term::Num, term::Blob, term::Cat, term::Sealed> value;
  Bytes encoding;
  std::size_t depth = 1;
};

namespace {

template <class T>
const T& expect(const auto& variant, const char* what) {
  if (const auto* p = std::get_if<T>(&variant)) return *p;
  throw Error(Errc::Malformed, std::string("term is not ") + what);
}

}  // namespace

Term Term::atom(std::string label) {
  auto n = std::make_shared<Node>();
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Atom));
  put_text(n->encoding, label);
  n->value = term::Atom{std::move(label)};
  return Term(std::move(n));
}

Term Term::id(std::string party) {
  auto n = std::make_shared<Node>();
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Id));
  put_text(n->encoding, party);
  n->value = term::Id{std::move(party)};
  return Term(std::move(n));
}

Term Term::nonce(std::string tag, const NonceValue& value) {
  auto n = std::make_shared<Node>();
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Nonce));
  put_text(n->encoding, tag);
  n->encoding.insert(n->encoding.end(), value.begin(), value.end());
  n->value = term::Nonce{std::move(tag), value};
  return Term(std::move(n));
}

Term Term::num(std::uint64_t value) {
  auto n = std::make_shared<Node>();
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Num));
  put_u64(n->encoding, value);
  n->value = term::Num{value};
  return Term(std::move(n));
}

Term Term::bytes(Bytes value) {
  auto n = std::make_shared<Node>();
  n->encoding.reserve(5 + value.size());
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Bytes));
  put_u32(n->encoding, static_cast<std::uint32_t>(value.size()));
  n->encoding.insert(n->encoding.end(), value.begin(), value.end());
  n->value = term::Blob{std::move(value)};
  return Term(std::move(n));
}

Term Term::cat(std::vector<Term> parts) {
  auto n = std::make_shared<Node>();
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Cat));
  put_u32(n->encoding, static_cast<std::uint32_t>(parts.size()));
  std::size_t depth = 0;
  for (const auto& p : parts) {
    const auto& e = p.encoding();
    n->encoding.insert(n->encoding.end(), e.begin(), e.end());
    depth = std::max(depth, p.depth());
  }
  n->depth = depth + 1;
  n->value = term::Cat{std::move(parts)};
  return Term(std::move(n));
}

Term Term::sealed(const Digest& tag, Term payload) {
  auto n = std::make_shared<Node>();
  const auto& e = payload.encoding();
  n->encoding.reserve(1 + kDigestSize + e.size());
  n->encoding.push_back(static_cast<std::uint8_t>(Tag::Sealed));
  n->encoding.insert(n->encoding.end(), tag.bytes.begin(), tag.bytes.end());
  n->encoding.insert(n->encoding.end(), e.begin(), e.end());
  n->depth = payload.depth() + 1;
  n->value = term::Sealed{tag, std::move(payload)};
  return Term(std::move(n));
}

namespace {

class Reader {
 public:
  explicit Reader(ByteView in) : in_(in) {}

  bool done() const { return pos_ == in_.size(); }

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }
  ByteView take(std::size_t n) {
    need(n);
    auto out = in_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string text() {
    auto b = take(u32());
    return {b.begin(), b.end()};
  }

  Term term(int depth = 0) {
    if (depth > 256) throw Error(Errc::Malformed, "term nesting too deep");
    switch (static_cast<Term::Tag>(u8())) {
      case Term::Tag::Atom: return Term::atom(text());
      case Term::Tag::Id: return Term::id(text());
      case Term::Tag::Nonce: {
        auto tag = text();
        NonceValue v;
        auto b = take(v.size());
        std::copy(b.begin(), b.end(), v.begin());
        return Term::nonce(std::move(tag), v);
      }
      case Term::Tag::Num: return Term::num(u64());
      case Term::Tag::Bytes: {
        auto b = take(u32());
        return Term::bytes(Bytes(b.begin(), b.end()));
      }
      case Term::Tag::Cat: {
        const auto count = u32();
        if (count > in_.size()) throw Error(Errc::Malformed, "cat count exceeds input");
        std::vector<Term> parts;
        parts.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) parts.push_back(term(depth + 1));
        return Term::cat(std::move(parts));
      }
      case Term::Tag::Sealed: {
        auto tag = Digest::from(take(kDigestSize));
        return Term::sealed(tag, term(depth + 1));
      }
    }
    throw Error(Errc::Malformed, "unknown term tag");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(Errc::Malformed, "truncated term encoding");
  }
  ByteView in_;
  std::size_t pos_ = 0;
};

}  // namespace

Term Term::deserialize(ByteView encoded) {
  Reader r(encoded);
  Term t = r.term();
  if (!r.done()) throw Error(Errc::Malformed, "trailing bytes after term");
  return t;
}

Term::Tag Term::tag() const { return static_cast<Tag>(node_->encoding.front()); }
const Bytes& Term::encoding() const { return node_->encoding; }
std::size_t Term::depth() const { return node_->depth; }

const std::string& Term::text() const {
  if (const auto* a = std::get_if<term::Atom>(&node_->value)) return a->label;
  if (const auto* i = std::get_if<term::Id>(&node_->value)) return i->party;
  if (const auto* n = std::get_if<term::Nonce>(&node_->value)) return n->tag;
  throw Error(Errc::Malformed, "term has no text");
}
const NonceValue& Term::nonce_value() const { return expect<term::Nonce>(node_->value, "a nonce").value; }
std::uint64_t Term::number() const { return expect<term::Num>(node_->value, "a number").value; }
const Bytes& Term::data() const { return expect<term::Blob>(node_->value, "a byte string").value; }
std::span<const Term> Term::parts() const { return expect<term::Cat>(node_->value, "a concatenation").parts; }
const Digest& Term::seal_tag() const { return expect<term::Sealed>(node_->value, "sealed").key_tag; }
const Term& Term::payload() const { return expect<term::Sealed>(node_->value, "sealed").payload; }

std::strong_ordering Term::operator<=>(const Term& o) const {
  const auto& a = encoding();
  const auto& b = o.encoding();
  return std::lexicographical_compare_three_way(a.begin(), a.end(), b.begin(), b.end());
}

std::size_t TermHash::operator()(const Term& t) const noexcept {
  // FNV-1a over the canonical encoding.
  std::size_t h = 1469598103934665603ull;
  for (auto byte : t.encoding()) {
    h ^= byte;
    h *= 1099511628211ull;
  }
  return h;
}

NonceValue increment(const NonceValue& v) {
  NonceValue out = v;
  for (int i = static_cast<int>(out.size()) - 1; i >= 0; --i) {
    if (++out[static_cast<std::size_t>(i)] != 0) break;
  }
  return out;
}

Term nonce_successor(const Term& nonce) { return Term::nonce(nonce.text(), increment(nonce.nonce_value())); }

// ---------------------------------------------------------------------------
// Sealing

void KeyRegistry::register_pair(const Key& public_half, const Key& private_half) {
  pairs_[key_tag(public_half)] = key_tag(private_half);
}

bool KeyRegistry::is_public(const Digest& tag) const { return pairs_.contains(tag); }

const Digest* KeyRegistry::private_for(const Digest& public_tag) const {
  auto it = pairs_.find(public_tag);
  return it == pairs_.end() ? nullptr : &it->second;
}

Term seal(const Key& key, Term payload) {
  counters::count_seal();
  return Term::sealed(key_tag(key), std::move(payload));
}

namespace {

bool tag_opens(const Digest& opener, const Digest& box_tag, const KeyRegistry* registry) {
  if (registry != nullptr) {
    if (const Digest* priv = registry->private_for(box_tag)) return opener == *priv;
  }
  return opener == box_tag;
}

}  // namespace

const Term& open(const Key& key, const Term& box, const KeyRegistry* registry) {
  counters::count_open();
  if (!box.is(Term::Tag::Sealed)) throw Error(Errc::NotSealed, "open on a non-sealed term");
  if (!tag_opens(key_tag(key), box.seal_tag(), registry)) throw Error(Errc::WrongKey, "key does not match seal");
  return box.payload();
}

bool can_open(ByteView key_bytes, const Term& box, const KeyRegistry* registry) {
  return box.is(Term::Tag::Sealed) && tag_opens(key_tag(key_bytes), box.seal_tag(), registry);
}

// ---------------------------------------------------------------------------
// Text

std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (auto byte : b) {
    out.push_back(kDigits[byte >> 4]);
    out.push_back(kDigits[byte & 0x0f]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(Errc::Malformed, "odd-length hex string");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    const int hi = nibble(hex[i]);
    const int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::Malformed, "invalid hex digit");
    out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
  }
  return out;
}

std::string render(const Term& t) {
  switch (t.tag()) {
    case Term::Tag::Atom: return t.text();
    case Term::Tag::Id: return "id:" + t.text();
    case Term::Tag::Nonce: return "nonce:" + t.text() + "#" + to_hex(t.nonce_value()).substr(0, 8);
    case Term::Tag::Num: return std::to_string(t.number());
    case Term::Tag::Bytes: return "0x" + to_hex(t.data()).substr(0, 16) + (t.data().size() > 8 ? ".." : "");
    case Term::Tag::Cat: {
      std::string out = "cat(";
      bool first = true;
      for (const auto& p : t.parts()) {
        if (!first) out += ",";
        out += render(p);
        first = false;
      }
      return out + ")";
    }
    case Term::Tag::Sealed:
      return "sealed[" + to_hex(t.seal_tag().view()).substr(0, 8) + "](" + render(t.payload()) + ")";
  }
  return "?";
}

}  // namespace tap
