#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace cdeshift {

using Rng = std::mt19937_64;

//! Generator for replicate `stream` of a run seeded with `master`.
inline Rng make_rng(std::uint64_t master, std::uint64_t stream = 0)
{
  std::seed_seq seq{ static_cast<std::uint32_t>(master),
                     static_cast<std::uint32_t>(master >> 32),
                     static_cast<std::uint32_t>(stream),
                     static_cast<std::uint32_t>(stream >> 32) };
  return Rng(seq);
}

//! Uniform integer in [0, bound) by rejection, independent of the
//! standard library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t bound)
{
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound) - 1;
  for (;;) {
    const std::uint64_t draw = rng();
    if (draw <= limit)
      return draw % bound;
  }
}

//! Uniform real in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

//! Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng)
{
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{ 0 });
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

} // namespace cdeshift
