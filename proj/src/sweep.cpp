// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/sweep.hpp"

#include <algorithm>
#include <ostream>

#include "kvfuse/analysis.hpp"
#include "kvfuse/attention.hpp"
#include "kvfuse/error.hpp"
#include "kvfuse/report_io.hpp"
#include "kvfuse/rng.hpp"

namespace kvfuse {

double merge_rate(const MergeStats& merge, double threshold) {
  if (merge.comparisons == 0) return 0.0;
  if (merge.similarity_std <= 0.0) {
    return merge.similarity_mean > threshold ? static_cast<double>(merge.comparisons) : 0.0;
  }
  return poisson_rate_gaussian(merge.comparisons, merge.similarity_mean, merge.similarity_std, threshold);
}

RatePrediction predict_rates(std::span<const FusionReport> reports) {
  RatePrediction p;
  double leaf_absorbed = 0.0;
  for (const auto& report : reports) {
    double layer_rate = 0.0;
    for (const auto& m : report.merges) {
      const double rate = merge_rate(m, report.threshold);
      layer_rate += rate;
      if (m.height == 1) {
        ++p.leaf_merges;
        p.leaf_rate_mean += rate;
        leaf_absorbed += static_cast<double>(m.absorbed);
      }
    }
    p.layer_rates.push_back(layer_rate);
    p.total_rate += layer_rate;
    p.total_blocks += report.blocks_before;
  }
  if (p.leaf_merges > 0) {
    p.leaf_rate_mean /= static_cast<double>(p.leaf_merges);
    p.leaf_absorbed_mean = leaf_absorbed / static_cast<double>(p.leaf_merges);
  }
  const double total = static_cast<double>(p.total_blocks);
  if (p.total_rate < total) p.compression_ratio = total / (total - p.total_rate);
  return p;
}

namespace {

CacheFusion fuse(const PagedKvCache& cache, const SweepConfig& config, double threshold) {
  FusionConfig fc;
  fc.threshold = threshold;
  fc.variant = config.variant;
  fc.group_size = config.group_size;
  return config.variant == Variant::kBatch ? fuse_batch(cache, fc, config.threads)
                                           : fuse_chunks(cache, fc, config.chunk_tokens, config.threads);
}

}  // namespace

std::vector<SweepPoint> run_sweep(const PagedKvCache& cache, const SweepConfig& config) {
  require(!config.thresholds.empty(), ErrorKind::kConfig, "threshold grid is empty");
  const CacheDims& dims = cache.dims();

  // Baseline views and the fixed query set shared by every threshold.
  std::vector<LayerView> baseline;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    auto [keys, values] = unfold_bff(cache, l);
    BlockTable table = BlockTable::identity(l, keys.row_sizes());
    baseline.push_back(refold(keys, values, table));
  }
  std::vector<AttentionQuery> queries(config.queries);
  Rng rng(Rng::derive(config.seed, 0x71));
  for (auto& q : queries) {
    q.layer = rng.below(dims.layers);
    q.request = rng.below(dims.requests);
    q.head = rng.below(dims.heads);
    q.q.resize(dims.head_dim);
    for (double& x : q.q) x = rng.normal();
  }
  std::vector<SoftmaxDistribution> reference;
  for (const auto& q : queries) reference.push_back(paged_attention(q, baseline[q.layer]).distribution);

  std::vector<SweepPoint> points;
  for (double threshold : config.thresholds) {
    const CacheFusion fused = fuse(cache, config, threshold);
    SweepPoint point;
    point.threshold = threshold;
    point.cr_empirical = fused.compression_ratio();
    const auto reports = fused.reports();
    point.prediction = predict_rates(reports);
    std::vector<LayerView> views;
    for (const auto& layer : fused.layers) views.push_back(layer.view());
    double total = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto& q = queries[i];
      const double drift = attention_drift(reference[i], paged_attention(q, views[q.layer]).distribution);
      total += drift;
      point.max_drift = std::max(point.max_drift, drift);
    }
    point.mean_drift = queries.empty() ? 0.0 : total / static_cast<double>(queries.size());
    points.push_back(std::move(point));
  }
  return points;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points) {
  out << "threshold,cr_empirical,cr_predicted,mean_drift";
  const std::size_t layers = points.empty() ? 0 : points.front().prediction.layer_rates.size();
  for (std::size_t l = 0; l < layers; ++l) out << ",lambda_l" << l;
  out << ",leaf_lambda_mean,leaf_absorbed_mean\n";
  for (const auto& p : points) {
    out << format_double(p.threshold) << ',' << format_double(p.cr_empirical) << ','
        << (p.prediction.compression_ratio ? format_double(*p.prediction.compression_ratio) : "inf")
        << ',' << format_double(p.mean_drift);
    for (double rate : p.prediction.layer_rates) out << ',' << format_double(rate);
    out << ',' << format_double(p.prediction.leaf_rate_mean) << ','
        << format_double(p.prediction.leaf_absorbed_mean) << '\n';
  }
}

nlohmann::json to_json(std::span<const SweepPoint> points) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::json j{{"threshold", p.threshold},
                     {"cr_empirical", p.cr_empirical},
                     {"mean_drift", p.mean_drift},
                     {"max_drift", p.max_drift},
                     {"lambda_per_layer", p.prediction.layer_rates},
                     {"lambda_total", p.prediction.total_rate},
                     {"leaf_merges", p.prediction.leaf_merges},
                     {"leaf_lambda_mean", p.prediction.leaf_rate_mean},
                     {"leaf_absorbed_mean", p.prediction.leaf_absorbed_mean}};
    j["cr_predicted"] = p.prediction.compression_ratio ? nlohmann::json(*p.prediction.compression_ratio)
                                                        : nlohmann::json("inf");
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace kvfuse
