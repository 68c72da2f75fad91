#pragma once

#include <cmath>
#include <cstdint>

namespace rmi {

// SplitMix64 stream (Steele, Lea, Flood 2014). The state walks a
// counter with the golden-ratio increment and the output is a bit mix
// of the state, so streams are reproducible across platforms and easy
// to port bit-exactly to other languages. Two calls with the same seed
// always produce the same sequence.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in the open interval (0, 1): top 53 bits shifted into the
  // mantissa, offset by half an ulp so 0 is never returned.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Bounded integer via modulo. The bias is below 2^-53 for the bounds
  // used here and keeps the stream trivially portable.
  std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

  // Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  // Derives an independent stream for sub-task `index` without
  // disturbing this stream's sequence.
  SplitMix64 split(std::uint64_t index) const {
    SplitMix64 mixer(state_ ^ (0xd1342543de82ef95ULL * (index + 1)));
    return SplitMix64(mixer.next_u64());
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace rmi
