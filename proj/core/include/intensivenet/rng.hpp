#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace inet {

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a tag. Every
/// consumer of randomness (per-parameter init, per-batch dropout, the
/// per-epoch shuffle, per-line generation) names its own stream, so the
/// result is invariant to evaluation order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
  for (char ch : tag) {
    h ^= std::uint8_t(ch);
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  return mix64(derive_seed(seed, tag) ^ mix64(index + 0x51ed270b0a1ULL));
}

inline std::mt19937_64 rng_for(std::uint64_t seed, std::string_view tag) {
  return std::mt19937_64(derive_seed(seed, tag));
}

inline std::mt19937_64 rng_for(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  return std::mt19937_64(derive_seed(seed, tag, index));
}

}  // namespace inet
