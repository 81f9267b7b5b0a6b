#pragma once

#include <cstdint>
#include <limits>

namespace dlmgp {

// xoshiro256** seeded through splitmix64. Small enough to construct one per
// (seed, epoch, point) stream, which keeps every per-point estimate
// reproducible regardless of evaluation order.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed = 0x9E3779B97F4A7C15ULL);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via the polar method; caches the spare draw.
  double normal();

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Independent stream for one (seed, epoch, index) triple.
Xoshiro256 make_stream(std::uint64_t seed, std::uint64_t epoch,
                       std::uint64_t index);

}  // namespace dlmgp
