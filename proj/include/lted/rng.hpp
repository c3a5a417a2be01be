#pragma once

#include <cstdint>
#include <limits>

namespace lted {

/// splitmix64 finalizer; used both as a seed mixer and as the stream generator.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Purpose tags for per-frame random streams. Streams are keyed by
/// (seed, episode, device, frame, purpose) so the order in which the event
/// loop consumes randomness never changes what a frame observes.
enum class StreamPurpose : std::uint64_t {
  kScene = 1,
  kDetection = 2,
  kTracking = 3,
  kChannel = 4,
  kPolicy = 5,
  kTrainer = 6,
  kInit = 7,
};

/// Small counter-based generator (splitmix64). Satisfies
/// UniformRandomBitGenerator so it plugs into <random> distributions.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; kept local so sequences do not depend on
  /// the standard library's distribution implementation.
  double normal() noexcept;

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Derive an independent stream for a keyed purpose.
  static RandomStream derive(std::uint64_t seed, std::uint64_t episode,
                             std::uint64_t device, std::uint64_t frame,
                             StreamPurpose purpose) noexcept {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ episode);
    h = mix64(h ^ (device + 0x1000));
    h = mix64(h ^ (frame + 0x100000));
    h = mix64(h ^ static_cast<std::uint64_t>(purpose));
    return RandomStream(h);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lted
