#pragma once

#include <cstdint>
#include <string_view>

namespace rcsm {

/// splitmix64 finaliser; a cheap bijective mixer for deriving seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of a named sub-stream, e.g. sub_seed(run_seed, "simulate"). Streams
/// with different names are unrelated; the same name always gives the same seed.
constexpr std::uint64_t sub_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return mix_seed(seed ^ h);
}

/// Seed of the i-th item (frame, episode, ...) of a stream.
constexpr std::uint64_t indexed_seed(std::uint64_t seed, std::uint64_t index) {
  return mix_seed(mix_seed(seed) + index);
}

}  // namespace rcsm
