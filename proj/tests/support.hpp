#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tap/keychain.hpp"
#include "tap/message_algebra.hpp"
#include "tap/scenario_io.hpp"

namespace tap::testing {

inline std::filesystem::path scenario_dir() { return TAP_SCENARIO_DIR; }
inline std::filesystem::path oracle_dir() { return TAP_ORACLE_DIR; }

inline ScenarioConfig scenario(const std::string& name) { return load_scenario(scenario_dir() / (name + ".scenario")); }

inline nlohmann::json oracle_vectors() {
  std::ifstream in(oracle_dir() / "keychain_vectors.json");
  return nlohmann::json::parse(in);
}

inline Bytes hex(const nlohmann::json& j) { return from_hex(j.get<std::string>()); }

inline Value32 value32(ByteView b) {
  Value32 v{};
  std::copy_n(b.begin(), std::min(b.size(), v.size()), v.begin());
  return v;
}

template <std::size_t N>
std::array<std::uint8_t, N> random_array(std::mt19937_64& rng) {
  std::array<std::uint8_t, N> out{};
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

inline Key random_key(std::mt19937_64& rng, KeyKind kind = KeyKind::Session) {
  return Key::from(random_array<kDigestSize>(rng), kind);
}

inline SecretTable random_table(std::mt19937_64& rng, std::size_t n = 8) {
  SecretTable t;
  for (std::size_t i = 0; i < n; ++i) t.entries.push_back(random_array<kDigestSize>(rng));
  return t;
}

inline KeyMsg random_msg(std::mt19937_64& rng, std::uint32_t length, RetrievalMode mode = RetrievalMode::Mode1) {
  KeyMsg m;
  m.index = rng() % 1000;
  m.offset = rng() % 1000;
  m.duration = 100ull * length;
  m.length = length;
  m.nonce = random_array<16>(rng);
  m.mode = mode;
  return m;
}

}  // namespace tap::testing
