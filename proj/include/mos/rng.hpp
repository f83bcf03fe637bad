#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "mos/matrix.hpp"

namespace mos {

// xoshiro256** seeded through splitmix64. The stream depends only on the
// seed, so results are reproducible across compilers and platforms. None of
// the <random> distributions are used for the same reason.
//
// Single owner: do not sample from one instance on several threads.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64";

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform01() noexcept;
  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal() noexcept;

  // Derives an independent stream, e.g. one per layer or per seed.
  Rng fork(std::uint64_t stream) const noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
  std::optional<double> spare_normal_;
};

// n draws in [-bound, +bound].
Vector sample_uniform(Rng& rng, std::size_t n, double bound);
// n standard-normal draws.
Vector sample_normal(Rng& rng, std::size_t n);

}  // namespace mos
