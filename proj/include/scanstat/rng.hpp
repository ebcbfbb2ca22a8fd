#pragma once

#include <cmath>
#include <cstdint>

#include "scanstat/distributions.hpp"

namespace scanstat {

// splitmix64 finalizer; full avalanche, bijective on 64 bits.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

// Counter-based stream: output k = mix64(key + k*gamma), so any draw is a pure
// function of (key, counter). Substreams are derived by hashing (key, index),
// which makes results independent of scheduling: stream i of realization j is
// root.child(i).child(j) no matter which thread asks first.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(mix64(seed + kGamma)) {}

  RngStream child(std::uint64_t index) const {
    return RngStream(mix64(key_ ^ mix64(index + kGamma)), Raw{});
  }

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGamma); }

  // strictly inside (0,1): 53-bit mantissa offset by half an ulp
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  double normal();               // inverse-CDF transform
  double chi_square(double nu);  // Marsaglia-Tsang via gamma(nu/2, 2)

  std::uint64_t key() const { return key_; }

 private:
  struct Raw {};
  RngStream(std::uint64_t key, Raw) : key_(key) {}
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline double RngStream::normal() { return normal_quantile(uniform()); }

inline double RngStream::chi_square(double nu) {
  double a = 0.5 * nu;
  double boost = 1.0;
  if (a < 1.0) {
    // gamma(a) = gamma(a+1) * U^(1/a)
    boost = std::pow(uniform(), 1.0 / a);
    a += 1.0;
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return 2.0 * boost * d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return 2.0 * boost * d * v;
  }
}

}  // namespace scanstat
