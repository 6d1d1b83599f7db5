#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace logoproxy {

using Rng = std::mt19937_64;

// Uniform integer in [0, n) by rejection on raw engine output, so the stream
// does not depend on the standard library's distribution implementation.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <typename T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_below(rng, i)]);
  }
}

}  // namespace logoproxy
