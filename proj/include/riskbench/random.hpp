#pragma once

// Counter-based pseudo-random numbers. Every draw is a pure function of
// (seed, stream, counter), so results do not depend on call order, thread
// scheduling or the standard library's distribution implementations.

#include <cstdint>

namespace riskbench::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t counter) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter);
}

/// Uniform double in [0, 1) with 53 bits of resolution.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

constexpr double uniform(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t counter) noexcept {
  return to_unit(hash(seed, stream, counter));
}

/// Maps 64 random bits onto [0, range) by multiply-shift.
inline std::uint64_t below(std::uint64_t bits, std::uint64_t range) noexcept {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(bits) * range) >> 64);
}

/// Sequential view over one (seed, stream) pair.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : seed_(seed), stream_(stream) {}

  std::uint64_t next() noexcept { return hash(seed_, stream_, counter_++); }
  double next_unit() noexcept { return to_unit(next()); }
  std::uint64_t next_below(std::uint64_t range) noexcept {
    return below(next(), range);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

/// Seeded Fisher-Yates shuffle.
template <typename Range>
void shuffle(Range& values, std::uint64_t seed, std::uint64_t stream) {
  CounterRng gen(seed, stream);
  const auto n = static_cast<std::uint64_t>(values.size());
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = gen.next_below(i);
    using std::swap;
    swap(values[i - 1], values[j]);
  }
}

}  // namespace riskbench::rng
