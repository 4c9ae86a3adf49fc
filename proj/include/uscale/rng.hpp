// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>

namespace uscale {

/// splitmix64 step; used for seeding and for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Deterministic child seed for stream `index` of a parent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// xoshiro256** generator with Box-Muller normals.
///
/// Stream definition, so other implementations can reproduce it:
///   - state words are four successive splitmix64 outputs from `seed`;
///   - uniform() = (next() >> 11) * 2^-53, in [0, 1);
///   - normal() draws u1 = 1 - uniform(), u2 = uniform(), returns
///     r cos(2 pi u2) with r = sqrt(-2 ln u1), and caches r sin(2 pi u2)
///     for the following call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next();
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::array<std::uint64_t, 4> s_{};
  std::optional<double> spare_;
};

}  // namespace uscale
