// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvfuse/cache.hpp"

namespace kvfuse {

enum class Assignment {
  kUniform,  // cluster drawn uniformly per block
  kZipf,     // P(c) proportional to (c + 1)^-zipf_exponent
  kCyclic,   // cluster = (request * p + block) mod clusters, no randomness
};

std::string_view to_string(Assignment assignment);
Assignment parse_assignment(std::string_view text);

/// Recipe for a synthetic cache with controllable block redundancy.
///
/// Every layer draws `clusters` base directions for keys and another set for
/// values (orthonormalized when clusters <= r). A block of cluster c is
/// norm * normalize(base_c + s * g), with g Gaussian noise orthogonal to
/// base_c and s chosen by calibrate_noise so that the expected cosine to
/// base_c equals `intra_cluster_similarity`. Keys and values share the
/// cluster assignment but draw independent noise and norms. Cluster
/// assignments are shared by all layers.
struct SyntheticSpec {
  CacheDims dims;
  std::size_t clusters = 1;
  double intra_cluster_similarity = 1.0;
  Assignment assignment = Assignment::kUniform;
  double zipf_exponent = 1.0;
  double norm_log_mean = 0.0;  // block norms ~ lognormal(norm_log_mean, norm_log_sigma)
  double norm_log_sigma = 0.25;
  /// Leading blocks of every request copied bit-exactly from request 0.
  std::size_t shared_prefix_blocks = 0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const nlohmann::json& j);

inline constexpr std::uint64_t kCalibrationSeed = 0x6b766675736521ULL;
inline constexpr std::size_t kCalibrationDraws = 10000;

/// Monte-Carlo estimate of E[cos(base, normalize(base + s * g))] in r dimensions.
double expected_cosine(std::size_t r, double noise_scale, std::uint64_t seed = kCalibrationSeed,
                       std::size_t draws = kCalibrationDraws);

/// Noise scale whose expected cosine equals target_cosine, by bisection on
/// expected_cosine with fixed draws. target 1 gives 0. Throws kConfig for
/// r < 2 or targets outside (0, 1].
double calibrate_noise(std::size_t r, double target_cosine, std::uint64_t seed = kCalibrationSeed,
                       std::size_t draws = kCalibrationDraws);

PagedKvCache generate(const SyntheticSpec& spec);

/// Cluster id of every (request, block), request-major, as generate() assigns them.
std::vector<std::size_t> cluster_assignment(const SyntheticSpec& spec);

/// Named fixtures used by tests and the `fixtures` command.
std::vector<std::string> fixture_names();
SyntheticSpec named_fixture(std::string_view name);

}  // namespace kvfuse
