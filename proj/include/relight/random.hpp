#pragma once

#include <cstdint>
#include <random>

namespace relight {

/// SplitMix64 finalizer; mixes a base seed with a stream index so that
/// per-row, per-sample and per-step generators are independent.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// The generator threaded explicitly through every sampling operation.
using Rng = std::mt19937_64;

}  // namespace relight
