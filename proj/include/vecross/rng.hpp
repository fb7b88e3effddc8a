#pragma once

#include <cstdint>
#include <limits>

namespace vecross {

// SplitMix64 finalizer. Used both as the stream generator and to derive
// independent stream seeds from (base seed, index, purpose) tuples.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index,
                                    std::uint64_t purpose = 0) noexcept {
  std::uint64_t h = mix64(base + 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ (index + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (purpose + 0x85157af5ULL));
  return h;
}

/// Splittable 64-bit generator (Steele, Lea & Flood). Satisfies
/// UniformRandomBitGenerator so it plugs into <random> distributions.
/// One instance per (trial seed, participant) keeps draws independent of
/// scheduling.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform double on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

inline SplitMix64 make_stream(std::uint64_t seed, std::uint64_t index,
                              std::uint64_t purpose = 0) noexcept {
  return SplitMix64(derive_seed(seed, index, purpose));
}

}  // namespace vecross
