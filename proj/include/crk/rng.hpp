#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace crk {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a bijective mix of one 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed keyed by (seed, k1, k2, ...).
/// Streams depend only on the key, never on the order in which they are
/// requested, so per-tree / per-column / per-replicate work can run in any
/// order and on any number of workers.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(seed, keys));
}

// Stream tags so different consumers of one user seed never collide.
namespace stream {
inline constexpr std::uint64_t kForestTree = 0x1001;
inline constexpr std::uint64_t kColumnModel = 0x1002;
inline constexpr std::uint64_t kResidualKnockoff = 0x1003;
inline constexpr std::uint64_t kCategoricalDraw = 0x1004;
inline constexpr std::uint64_t kSecondOrder = 0x1005;
inline constexpr std::uint64_t kPermute = 0x1006;
inline constexpr std::uint64_t kFolds = 0x1007;
inline constexpr std::uint64_t kMlpInit = 0x1008;
inline constexpr std::uint64_t kCovariates = 0x1009;
inline constexpr std::uint64_t kModeMeans = 0x100a;
inline constexpr std::uint64_t kNoise = 0x100b;
inline constexpr std::uint64_t kReplicate = 0x100c;
inline constexpr std::uint64_t kStatistic = 0x100d;
}  // namespace stream

}  // namespace crk
