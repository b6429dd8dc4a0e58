#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kap {

/// Seeded random stream with named, order-independent sub-streams.
///
/// `derive` depends only on the seed this stream was created with, never on
/// how many numbers have been drawn, so adding a consumer of one sub-stream
/// does not shift the draws seen by another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  Rng derive(std::string_view name) const;
  Rng derive(std::uint64_t index) const;

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace kap
