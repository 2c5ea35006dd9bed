#pragma once

#include <cstdint>
#include <vector>

namespace bg {

// Inverse normal CDF (Wichura's AS 241, double precision). Exposed for tests.
double normal_icdf(double p);

// Counter-based random stream: an xoshiro256++ generator seeded by hashing
// (master seed, purpose, replicate, stage). Every consumer draws a fixed
// number of variates per subject, so streams align across runs that force
// different treatment paths, and replicate-level parallelism cannot change
// any drawn value.
class Stream {
 public:
  Stream(std::uint64_t master, std::uint64_t purpose, std::uint64_t replicate,
         std::uint64_t stage);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1), 53-bit
  double normal(double mean = 0.0, double sd = 1.0);  // inverse-CDF, one uniform
  bool bernoulli(double p);
  // Index 1..K via inverse CDF over cumulative probabilities (one uniform).
  int ordinal(const std::vector<double>& cumulative);

 private:
  std::uint64_t state_[4];
};

}  // namespace bg
