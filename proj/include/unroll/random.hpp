#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so results never depend on evaluation order,
// thread scheduling, or the standard library's distribution internals.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace unroll {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept
{
  return mix64(mix64(mix64(seed) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

/// Derives an independent sub-seed from a parent seed and a textual tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept
{
  std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept
{
  return hash_key(seed, 0x5eedULL, index);
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) noexcept { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Standard normal keyed on (seed, a, b). Box-Muller, cosine branch.
inline double keyed_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept
{
  std::uint64_t const base = hash_key(seed, a, b);
  double const u1 = 1.0 - to_unit(mix64(base ^ 0x1ULL)); // (0, 1]
  double const u2 = to_unit(mix64(base ^ 0x2ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential view over the keyed generator.
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
    : seed_(seed)
    , stream_(stream)
  {
  }

  std::uint64_t next_u64() noexcept { return hash_key(seed_, stream_, counter_++); }
  double uniform() noexcept { return to_unit(next_u64()); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept { return keyed_normal(seed_, stream_, counter_++); }

  /// Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) noexcept
  {
    std::uint64_t const limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    for (;;) {
      std::uint64_t const r = next_u64();
      if (r < limit) { return r % bound; }
    }
  }

private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

} // namespace unroll
