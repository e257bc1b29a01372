#pragma once

#include <cstdint>
#include <random>

namespace hybridtrial {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t kDefaultSeed = 20240917;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named seed streams. A (base, stream, index) triple maps to one independent
// generator, so parallel work can be seeded up front and scheduled freely.
enum class Stream : std::uint64_t {
  Observed = 1,
  FrtResample = 2,
  Bootstrap = 3,
  Scenario = 4,
  Replication = 5,
  Method = 6,
  Adaptive = 7,
};

constexpr std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                    std::uint64_t index = 0) {
  const auto tag = static_cast<std::uint64_t>(stream);
  return splitmix64(splitmix64(base ^ splitmix64(tag)) + index);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

}  // namespace hybridtrial
