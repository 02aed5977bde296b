// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>

namespace kvfuse {

/// Deterministic random source: std::mt19937_64 for raw bits plus fixed
/// transforms, so a seed reproduces the same stream on any conforming
/// standard library (std:: distributions are implementation-defined).
///
///   uniform()  = (bits >> 11) * 2^-53                 in [0, 1)
///   normal()   = Marsaglia polar method on 2*uniform()-1 pairs, second
///                deviate of each accepted pair cached
///   below(n)   = rejection sampling on the top bits, no modulo bias
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  double uniform();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double lognormal(double mu, double sigma);
  std::uint64_t below(std::uint64_t n);

  /// SplitMix64 finalizer over (seed, stream): independent child seeds.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace kvfuse
