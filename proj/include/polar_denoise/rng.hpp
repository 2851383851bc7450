#pragma once

// Stream discipline: one 64-bit experiment seed, and an independent
// mt19937_64 per (seed, stream) pair. Trajectory k of a batch always uses
// stream k, so results do not depend on how work is split across threads.

#include <cstdint>
#include <random>

namespace polar_denoise {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

/// Stream ids reserved for the generators that are not per-trajectory.
namespace streams {
inline constexpr std::uint64_t prior_generation = 0xA100'0000'0000'0000ULL;
inline constexpr std::uint64_t forward_corruption = 0xA200'0000'0000'0000ULL;
inline constexpr std::uint64_t training_pairs = 0xA300'0000'0000'0000ULL;
inline constexpr std::uint64_t perturbation = 0xA400'0000'0000'0000ULL;
inline constexpr std::uint64_t posterior_sampling = 0xA500'0000'0000'0000ULL;
inline constexpr std::uint64_t experiment = 0xA600'0000'0000'0000ULL;
}  // namespace streams

}  // namespace polar_denoise
