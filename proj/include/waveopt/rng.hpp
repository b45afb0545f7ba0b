#pragma once

#include <cmath>
#include <cstdint>

#include "waveopt/tensor.hpp"

namespace waveopt {

// Counter-based generator: output i is a pure function of (seed, i), so the
// stream is reproducible regardless of how callers interleave draws across
// derived generators. splitmix64 finalizer over seed + golden-ratio strides.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return at(counter_++); }

  // value in [0, 1)
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Box-Muller, two counter draws per sample; no cached spare so the stream
  // position stays a simple function of the sample count.
  double next_normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;          // [0,1)
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_uniform() * static_cast<double>(n)) % n;
  }

  // Independent stream for a named sub-task; stable under reordering of
  // unrelated draws on the parent.
  Rng fork(std::uint64_t stream) const {
    return Rng(at_static(seed_ ^ 0x5851f42d4c957f2dULL, stream));
  }

 private:
  static std::uint64_t at_static(std::uint64_t seed, std::uint64_t i) {
    std::uint64_t z = seed + (i + 1) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t at(std::uint64_t i) const { return at_static(seed_, i); }

  std::uint64_t seed_;
  std::uint64_t counter_;
};

template <typename T>
Tensor<T> rng_fill_normal(Rng& rng, const Shape& shape) {
  Tensor<T> out(shape);  // Tensor ctor rejects zero/negative extents
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<T>(rng.next_normal());
  return out;
}

template <typename T>
Tensor<T> rng_fill_uniform(Rng& rng, const Shape& shape, T lo = T(0), T hi = T(1)) {
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<T>(lo + (hi - lo) * static_cast<T>(rng.next_uniform()));
  return out;
}

}  // namespace waveopt
