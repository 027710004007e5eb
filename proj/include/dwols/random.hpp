#pragma once

#include <cstdint>
#include <random>

namespace dwols {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream tag, index). Streams depend only on
// these three values, so serial and parallel runs draw identical numbers.
inline Rng substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

inline constexpr std::uint64_t kCohortStream = 1;
inline constexpr std::uint64_t kValueStream = 2;
inline constexpr std::uint64_t kBootstrapStream = 3;

}  // namespace dwols
