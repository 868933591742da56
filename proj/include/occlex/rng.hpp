#pragma once

// Seed derivation. Every random stream in the toolkit is a pure function of
// a master seed and a path of indices, so results never depend on thread
// scheduling or call order.

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>

namespace occlex {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t child) {
  return splitmix64(splitmix64(parent) ^ (child + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                           std::initializer_list<std::uint64_t> path) {
  for (auto p : path) parent = derive_seed(parent, p);
  return parent;
}

/// FNV-1a 64 of a string, used to key per-excerpt seeds by excerpt id.
inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view id) {
  return derive_seed(parent, fnv1a64(id));
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

/// Fast content hash over a float grid (4 independent lanes, then mixed).
inline std::uint64_t hash_floats(std::span<const float> values, std::uint64_t seed = 0) {
  std::uint64_t lane[4] = {seed ^ 0x9e3779b97f4a7c15ULL, seed ^ 0xc2b2ae3d27d4eb4fULL,
                           seed ^ 0x165667b19e3779f9ULL, seed ^ 0x27d4eb2f165667c5ULL};
  const std::size_t n = values.size();
  std::size_t i = 0;
  auto bits = [&](std::size_t k) {
    std::uint32_t b;
    static_assert(sizeof(float) == sizeof(std::uint32_t));
    std::memcpy(&b, &values[k], sizeof(b));
    return static_cast<std::uint64_t>(b);
  };
  for (; i + 4 <= n; i += 4) {
    for (int l = 0; l < 4; ++l) lane[l] = (lane[l] ^ bits(i + static_cast<std::size_t>(l))) * 0x100000001b3ULL;
  }
  for (; i < n; ++i) lane[0] = (lane[0] ^ bits(i)) * 0x100000001b3ULL;
  std::uint64_t h = n;
  for (auto l : lane) h = derive_seed(h, l);
  return h;
}

}  // namespace occlex
