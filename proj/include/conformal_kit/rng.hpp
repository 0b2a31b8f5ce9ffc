#pragma once

#include <cstdint>
#include <random>

namespace ckit {

std::uint64_t splitmix64(std::uint64_t x);

// Splittable stream: child(j) depends only on the parent key and j.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  Rng child(std::uint64_t index) const;
  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double normal();
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ckit
