#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace qlandscape {

/// SplitMix64 finalizer, used to derive substream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random stream with deterministic, hierarchically indexed
/// substreams. A stream is identified by a 64-bit key derived from the
/// experiment seed and the chain of substream indices leading to it, so
/// `RandomStream(seed).substream(trial)` is the same sequence regardless
/// of which worker draws it or in which order trials run.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : RandomStream(seed, mix64(seed)) {}

  RandomStream substream(std::uint64_t index) const {
    return RandomStream(seed_, mix64(key_ ^ mix64(index + 0x632be59bd9b4e019ULL)));
  }

  /// Experiment seed this stream descends from.
  std::uint64_t seed() const noexcept { return seed_; }
  /// Key identifying this substream; recorded in outputs.
  std::uint64_t key() const noexcept { return key_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal() { return normal_(engine_); }

  /// Circularly symmetric complex Gaussian with E|z|^2 = 1.
  std::complex<double> complex_normal() {
    constexpr double kScale = 0.70710678118654752440;
    const double re = normal();
    const double im = normal();
    return {kScale * re, kScale * im};
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  RandomStream(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key), engine_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace qlandscape
