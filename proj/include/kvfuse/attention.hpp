// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvfuse/layer_view.hpp"

namespace kvfuse {

/// A single-head decode query against one request of one layer.
struct AttentionQuery {
  std::vector<double> q;  // head_dim entries
  std::size_t head = 0;
  std::size_t layer = 0;
  std::size_t request = 0;
};

struct SoftmaxDistribution {
  std::vector<double> s;
};

struct AttentionResult {
  std::vector<double> output;  // head_dim entries
  SoftmaxDistribution distribution;
  std::vector<double> logits;
};

/// Max-subtracted softmax. Throws kInvalidInput on empty or non-finite logits.
SoftmaxDistribution softmax(std::span<const double> logits);

/// Exact attention over every logical token of the query's request. Keys and
/// values are rebuilt per slot as norm * direction, so fused slots keep
/// their own magnitude.
AttentionResult paged_attention(const AttentionQuery& query, const LayerView& view);

/// L1 distance between two distributions of equal length.
double attention_drift(const SoftmaxDistribution& s, const SoftmaxDistribution& s_prime);

struct DriftBound {
  double epsilon = 0.0;
  double loose_bound = 0.0;  // 2 * epsilon
  double exact_bound = 0.0;  // exp(2 * epsilon) - 1
};

/// epsilon = max_i |k_i| |q| / sqrt(d) * sqrt(2 (1 - u)). Throws kDomain for
/// u > 1, negative norms or d == 0.
DriftBound drift_bound(std::span<const double> q, std::span<const double> key_norms, double u,
                       std::size_t d);

struct DriftTrialConfig {
  std::size_t trials = 1000;
  std::size_t dim = 16;
  std::size_t tokens = 32;
  double u = 0.95;
  std::uint64_t seed = 0;
  double key_norm_sigma = 0.25;  // keys have lognormal(0, sigma) norms
};

struct DriftVerification {
  std::size_t trials = 0;
  double u = 0.0;
  std::size_t d = 0;
  std::size_t tokens = 0;
  double max_ratio = 0.0;  // max drift / exact_bound
  double max_drift = 0.0;
  std::size_t violations = 0;           // drift > exp(2 eps) - 1
  std::size_t envelope_checked = 0;     // trials with eps <= 0.5
  std::size_t envelope_violations = 0;  // drift > 2 eps + 2 eps^2 among those
  std::optional<std::uint64_t> first_violation_seed;

  bool passed() const noexcept { return violations == 0 && envelope_violations == 0; }
  nlohmann::json to_json() const;
};

/// Draws random queries and keys, rotates every unit key by arccos(u)
/// toward a random orthogonal direction (norms unchanged) and checks the
/// measured drift against the bound. Trial i uses seed Rng::derive(seed, i).
DriftVerification verify_drift_bound(const DriftTrialConfig& config);

/// One trial of verify_drift_bound, exposed so a failing seed can be replayed.
struct DriftTrial {
  double drift = 0.0;
  DriftBound bound;
};
DriftTrial run_drift_trial(const DriftTrialConfig& config, std::uint64_t trial_seed);

}  // namespace kvfuse
