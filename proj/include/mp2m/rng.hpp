#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace mp2m {

// Seeded generator with value-only state, so a serialized engine resumes the
// exact same stream. Distributions are constructed per draw and never carry
// cached values between calls.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream keyed by (seed, keys...).
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(engine_);
  }
  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(engine_);
  }
  // Uniform integer in [lo, hi].
  long long uniform_int(long long lo, long long hi) {
    std::uniform_int_distribution<long long> d(lo, hi);
    return d(engine_);
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mp2m
