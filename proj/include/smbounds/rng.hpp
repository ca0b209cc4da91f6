#pragma once

#include <cstdint>

#include "smbounds/numeric.hpp"

namespace smb {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the k-th output of stream `stream` under `seed`
/// is mix64(key + (k + 1) * golden), where key = mix64(seed, stream). Any
/// draw is addressable as (seed, stream, counter) without replaying the
/// stream, so replications and units can be generated in any order or on
/// any thread with identical results.
///
/// Stream layout used across the library:
///   - stream = replication index (simlab), bootstrap replicate + 1, etc.;
///   - within a stream, unit i of draw_sample consumes counters
///     [kDrawsPerUnit * i, kDrawsPerUnit * (i + 1)).
class CounterRng {
 public:
  using result_type = std::uint64_t;
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  CounterRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0)
      : key_(derive_key(seed, stream)), counter_(counter) {}

  static constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed ^ 0x5851f42d4c957f2dULL) + kGolden * (stream + 1));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }

  result_type operator()() { return mix64(key_ + kGolden * (++counter_)); }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal by inversion, so that one normal consumes one counter.
  double normal() { return normal_quantile(uniform()); }

  /// Uniform integer in [0, n) by Lemire's multiply-shift (n < 2^32 here).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

  void seek(std::uint64_t counter) { counter_ = counter; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace smb
