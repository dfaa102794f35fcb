#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "support.hpp"
#include "tap/counters.hpp"
#include "tap/error.hpp"

using namespace tap;
using namespace tap::testing;

namespace {

Term random_term(std::mt19937_64& rng, int depth) {
  const int pick = static_cast<int>(rng() % (depth > 0 ? 7 : 5));
  auto text = [&] {
    std::string s;
    const auto n = rng() % 4;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng() % 3));
    return s;
  };
  switch (pick) {
    case 0: return Term::atom(text());
    case 1: return Term::id(text());
    case 2: return Term::nonce(text(), random_array<16>(rng));
    case 3: return Term::num(rng() % 5);
    case 4: {
      Bytes b(rng() % 3);
      for (auto& x : b) x = static_cast<std::uint8_t>(rng() % 2);
      return Term::bytes(b);
    }
    case 5: {
      std::vector<Term> parts;
      const auto n = rng() % 3;
      for (std::size_t i = 0; i < n; ++i) parts.push_back(random_term(rng, depth - 1));
      return Term::cat(std::move(parts));
    }
    default: {
      Digest tag{};
      tag.bytes[0] = static_cast<std::uint8_t>(rng() % 2);
      return Term::sealed(tag, random_term(rng, depth - 1));
    }
  }
}

bool structurally_equal(const Term& a, const Term& b) {
  if (a.tag() != b.tag()) return false;
  switch (a.tag()) {
    case Term::Tag::Atom:
    case Term::Tag::Id: return a.text() == b.text();
    case Term::Tag::Nonce: return a.text() == b.text() && a.nonce_value() == b.nonce_value();
    case Term::Tag::Num: return a.number() == b.number();
    case Term::Tag::Bytes: return a.data() == b.data();
    case Term::Tag::Cat: {
      const auto pa = a.parts(), pb = b.parts();
      if (pa.size() != pb.size()) return false;
      for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!structurally_equal(pa[i], pb[i])) return false;
      }
      return true;
    }
    case Term::Tag::Sealed: return a.seal_tag() == b.seal_tag() && structurally_equal(a.payload(), b.payload());
  }
  return false;
}

}  // namespace

TEST_CASE("hash matches the published SHA-256 empty digest") {
  const auto v = oracle_vectors();
  CHECK(to_hex(hash(ByteView{}).view()) == v["hash_empty"].get<std::string>());
}

TEST_CASE("hash is deterministic and sensitive to a trailing zero") {
  std::mt19937_64 rng(1);
  const auto x = random_array<24>(rng);
  Bytes longer(x.begin(), x.end());
  longer.push_back(0);
  CHECK(hash(x) == hash(x));
  CHECK(hash(x) != hash(longer));
}

TEST_CASE("xor_combine pads the shorter operand") {
  const auto v = oracle_vectors();
  CHECK(to_hex(xor_combine(Bytes{0x01}, Bytes{0x01, 0x02})) == v["xor_01_0102"].get<std::string>());
  std::mt19937_64 rng(2);
  const auto x = random_array<32>(rng);
  CHECK(xor_combine(x, Bytes(32, 0)) == Bytes(x.begin(), x.end()));
  CHECK(xor_combine(x, x) == Bytes(32, 0));
}

TEST_CASE("seal and open") {
  std::mt19937_64 rng(3);
  const Key k1 = random_key(rng), k2 = random_key(rng);
  const Term t = Term::atom("x");
  const Term box = seal(k1, t);
  CHECK(open(k1, box) == t);
  CHECK(seal(k1, t) == box);

  try {
    open(k2, box);
    FAIL("expected WrongKey");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::WrongKey);
  }
  try {
    open(k1, t);
    FAIL("expected NotSealed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotSealed);
  }
}

TEST_CASE("key kind is metadata only") {
  std::mt19937_64 rng(4);
  const Key a = random_key(rng, KeyKind::Group);
  Key b = a;
  b.kind = KeyKind::TimeBased;
  CHECK(a == b);
  CHECK(open(b, seal(a, Term::num(7))) == Term::num(7));
}

TEST_CASE("round trip and opacity over random keys and terms") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const Key k = random_key(rng);
    Key other = k;
    other.bytes[rng() % kDigestSize] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    const Term t = random_term(rng, 3);
    const Term box = seal(k, t);
    CHECK(open(k, box) == t);
    CHECK_THROWS_AS(open(other, box), Error);
  }
}

TEST_CASE("public-key pairs open only with the private half") {
  std::mt19937_64 rng(6);
  const Key pub = random_key(rng, KeyKind::PublicPair);
  const Key priv = random_key(rng, KeyKind::PublicPair);
  KeyRegistry reg;
  reg.register_pair(pub, priv);
  const Term box = seal(pub, Term::atom("secret"));
  CHECK(open(priv, box, &reg) == Term::atom("secret"));
  CHECK_THROWS_AS(open(pub, box, &reg), Error);
  CHECK(can_open(priv.view(), box, &reg));
  CHECK_FALSE(can_open(pub.view(), box, &reg));
}

TEST_CASE("serialization is injective on a random corpus") {
  // Small alphabets make structurally equal pairs common enough to exercise
  // both directions of the equivalence.
  std::mt19937_64 rng(7);
  int equal = 0;
  for (int i = 0; i < 20000; ++i) {
    const Term a = random_term(rng, 2);
    const Term b = random_term(rng, 2);
    const bool same = structurally_equal(a, b);
    CHECK((a.encoding() == b.encoding()) == same);
    CHECK(Term::deserialize(a.encoding()) == a);
    equal += same ? 1 : 0;
  }
  CHECK(equal > 0);
}

TEST_CASE("deserialize rejects malformed input") {
  CHECK_THROWS_AS(Term::deserialize(Bytes{0x09}), Error);
  CHECK_THROWS_AS(Term::deserialize(Bytes{0x01, 0, 0, 0, 5, 'a'}), Error);
  auto enc = Term::atom("ok").encoding();
  enc.push_back(0);
  CHECK_THROWS_AS(Term::deserialize(enc), Error);
}

TEST_CASE("nonce successor wraps at 2^128") {
  NonceValue max{};
  max.fill(0xff);
  CHECK(increment(max) == NonceValue{});
  NonceValue one{};
  one.back() = 1;
  CHECK(increment(NonceValue{}) == one);
  const Term n = Term::nonce("N0", NonceValue{});
  CHECK(nonce_successor(n).nonce_value() == one);
  CHECK(nonce_successor(n).text() == "N0");
}

TEST_CASE("counters scope and nesting") {
  OpCounts outer, inner;
  {
    counters::Scope a(outer);
    hash(Bytes{1});
    {
      counters::Scope b(inner);
      hash(Bytes{2});
      xor_combine(Bytes{1}, Bytes{2});
    }
    seal(Key{}, Term::atom("x"));
  }
  CHECK(outer.hash == 1);
  CHECK(outer.seal == 1);
  CHECK(inner.hash == 1);
  CHECK(inner.xor_ops == 1);
  digest_uncounted(Bytes{3});
  CHECK(outer.hash == 1);
}

TEST_CASE("hex helpers") {
  CHECK(to_hex(Bytes{0x00, 0xab, 0xff}) == "00abff");
  CHECK(from_hex("00abff") == Bytes{0x00, 0xab, 0xff});
  CHECK_THROWS_AS(from_hex("abc"), Error);
}
