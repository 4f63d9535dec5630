#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace otopipe {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// SplitMix64 generator. Every random decision in the toolkit draws from one
// of these, so outputs depend only on the seeds and not on the standard
// library's distribution implementations.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  // Stream for (seed, run_index, sub_seed): the state is
  // mix64(mix64(seed) ^ mix64(run_index + 1) ^ mix64(~sub_seed)).
  static constexpr SplitMix64 stream(std::uint64_t seed, std::uint64_t run_index,
                                     std::uint64_t sub_seed = 0) {
    return SplitMix64(mix64(mix64(seed) ^ mix64(run_index + 1) ^ mix64(~sub_seed)));
  }

  constexpr std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  // Uniform integer in [0, bound) by rejection; bound must be > 0.
  constexpr std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// Fisher-Yates, swapping position i with below(i + 1) from the back.
template <class T>
void shuffle(std::span<T> items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace otopipe
