// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvfuse/cache.hpp"
#include "kvfuse/fusion.hpp"

namespace kvfuse {

/// Gaussian exceedance rate of one merge, n = comparisons, from the merge's
/// own similarity mean and standard deviation.
double merge_rate(const MergeStats& merge, double threshold);

/// Expected absorbed blocks of a whole fusion run: the per-merge Gaussian
/// rates summed over every merge of every layer. For a single pair of rows
/// this reduces to the per-layer sum in the compression-ratio formula.
struct RatePrediction {
  std::vector<double> layer_rates;  // summed over the merges of each layer
  double total_rate = 0.0;
  std::size_t total_blocks = 0;
  std::optional<double> compression_ratio;  // empty when the prediction diverges
  std::size_t leaf_merges = 0;              // merges of two single rows
  double leaf_rate_mean = 0.0;
  double leaf_absorbed_mean = 0.0;
};
RatePrediction predict_rates(std::span<const FusionReport> reports);

struct SweepConfig {
  Variant variant = Variant::kBatch;
  std::size_t chunk_tokens = 0;  // CFF only
  std::optional<std::size_t> group_size;
  std::vector<double> thresholds;
  std::size_t queries = 32;  // random decode queries for the drift column
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct SweepPoint {
  double threshold = 0.0;
  double cr_empirical = 1.0;
  RatePrediction prediction;
  double mean_drift = 0.0;
  double max_drift = 0.0;
};

/// Fuses the cache at every threshold and joins the empirical compression
/// with the rate model and the attention drift of random queries.
std::vector<SweepPoint> run_sweep(const PagedKvCache& cache, const SweepConfig& config);

/// Columns: threshold, cr_empirical, cr_predicted, mean_drift, lambda_l<i>
/// per layer, leaf_lambda_mean, leaf_absorbed_mean.
void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points);
nlohmann::json to_json(std::span<const SweepPoint> points);

}  // namespace kvfuse
