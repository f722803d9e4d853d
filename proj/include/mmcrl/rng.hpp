#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace mmcrl {

/// SplitMix64 finalizer. Bijective mixing of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hash of (seed, a, b, c) used to key random draws by position, so any
/// element of a random tensor can be produced independently of the others.
constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t a,
                                     std::uint64_t b = 0,
                                     std::uint64_t c = 0) noexcept {
  std::uint64_t h = mix64(seed ^ 0x5851f42d4c957f2dULL);
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (c + 0x2545f4914f6cdd1dULL));
  return h;
}

/// Uniform in the open interval (0, 1) from a 64-bit word.
inline double to_unit_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw keyed on (seed, a, b, c); Box-Muller over two
/// independent counter hashes.
inline double counter_normal(std::uint64_t seed, std::uint64_t a,
                             std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
  const double u1 = to_unit_open(counter_hash(seed, a, b, 2 * c));
  const double u2 = to_unit_open(counter_hash(seed, a, b, 2 * c + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double counter_uniform(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
  return to_unit_open(counter_hash(seed, a, b, c));
}

/// Sequential generator over a counter-based stream. The full state is
/// (seed, stream, counter), which makes it trivially serializable.
class CounterRng {
public:
  CounterRng() = default;
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint64_t next_u64() noexcept { return counter_hash(seed_, stream_, counter_++); }
  double uniform() noexcept { return to_unit_open(next_u64()); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < 2^-64 * n which is irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

/// Stream identifiers. Keeping them in one place avoids accidental reuse.
namespace streams {
inline constexpr std::uint64_t kGraph = 0x01;
inline constexpr std::uint64_t kStructural = 0x02;
inline constexpr std::uint64_t kNoise = 0x03;
inline constexpr std::uint64_t kExogenous = 0x04;
inline constexpr std::uint64_t kProbe = 0x05;
inline constexpr std::uint64_t kModelInit = 0x10;
inline constexpr std::uint64_t kSplit = 0x11;
inline constexpr std::uint64_t kShuffle = 0x12;
inline constexpr std::uint64_t kReparam = 0x13;
inline constexpr std::uint64_t kGateNoise = 0x14;
inline constexpr std::uint64_t kTheory = 0x20;
inline constexpr std::uint64_t kMetricSplit = 0x30;
inline constexpr std::uint64_t kMnist = 0x40;
}  // namespace streams

}  // namespace mmcrl
