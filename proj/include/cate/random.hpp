#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cate {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a child seed from a parent seed and a path of coordinates. The
// result depends only on the arguments, never on call order.
inline std::uint64_t derive_seed(std::uint64_t parent,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(parent);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags so that different consumers of one replicate seed never share
// a random stream.
enum class Stream : std::uint64_t {
  kSource = 1,
  kSelection = 2,
  kAssignment = 3,
  kForest = 4,
  kIntegration = 5,
  kFolds = 6,
};

inline std::uint64_t derive_seed(std::uint64_t parent, Stream s) {
  return derive_seed(parent, {static_cast<std::uint64_t>(s)});
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

}  // namespace cate
