// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvfuse/error.hpp"
#include "kvfuse/parallel.hpp"

namespace kvfuse {

std::string_view to_string(Variant variant) {
  return variant == Variant::kBatch ? "bff" : "cff";
}

Variant parse_variant(std::string_view text) {
  if (text == "bff") return Variant::kBatch;
  if (text == "cff") return Variant::kChunks;
  fail(ErrorKind::kConfig, "unknown fusion variant '" + std::string(text) + "'");
}

void AdaptPolicy::validate() const {
  require(step > 0.0, ErrorKind::kConfig, "adapt step must be positive");
  require(min_threshold <= max_threshold, ErrorKind::kConfig, "adapt bounds must be ordered");
  require(min_threshold > -1.0 && max_threshold < 1.0, ErrorKind::kConfig,
          "adapt bounds must lie inside (-1, 1)");
  if (mode == Mode::kPercentile) {
    require(target > 0.0 && target < 1.0, ErrorKind::kConfig,
            "percentile target must be a fraction in (0, 1)");
  } else {
    require(target >= 1.0, ErrorKind::kConfig, "target compression ratio must be >= 1");
  }
}

void FusionConfig::validate() const {
  require(threshold > -1.0 && threshold < 1.0, ErrorKind::kConfig,
          "threshold " + std::to_string(threshold) + " outside (-1, 1)");
  require(!group_size || *group_size >= 1, ErrorKind::kConfig, "group size must be >= 1");
  if (adapt) adapt->validate();
}

std::size_t FusionReport::absorbed_total() const noexcept {
  std::size_t total = 0;
  for (const auto& e : fused_events) total += e.absorbed.size();
  return total;
}

double FusionReport::compression_ratio() const noexcept {
  return blocks_after == 0 ? 1.0 : static_cast<double>(blocks_before) / static_cast<double>(blocks_after);
}

LayerView LayerFusion::view() const {
  return refold(unfolded.keys, unfolded.values, storage, table);
}

namespace {

using Block = std::span<double>;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(Block v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

class TreeFuser {
 public:
  TreeFuser(const UnfoldedLayer& keys, PhysicalBlocks& storage, BlockTable& table, double threshold,
            FusionReport& report)
      : keys_(keys), storage_(storage), table_(table), threshold_(threshold), report_(report),
        key_sum_(keys.r()), value_sum_(keys.r()) {}

  /// Fuses rows [first, end); returns the surviving physical blocks in order.
  std::vector<PhysicalId> fuse(std::size_t first, std::size_t end, std::size_t& height) {
    if (end - first == 1) {
      height = 0;
      std::vector<PhysicalId> leaf;
      for (std::size_t b = 0; b < table_.blocks_in_row(first); ++b) {
        leaf.push_back(table_.physical(table_.slot(first, b)));
      }
      return leaf;
    }
    const std::size_t split = first + (end - first) / 2;
    std::size_t left_height = 0, right_height = 0;
    std::vector<PhysicalId> left = fuse(first, split, left_height);
    std::vector<PhysicalId> right = fuse(split, end, right_height);
    height = 1 + std::max(left_height, right_height);
    merge(left, right, {height, first, split, end});
    return left;
  }

 private:
  struct Span {
    std::size_t height, first, split, end;
  };

  bool fusable(PhysicalId id) const { return keys_.fusable(id); }

  // Merges `right` into `left`; on return `left` holds the concatenated result.
  void merge(std::vector<PhysicalId>& left, const std::vector<PhysicalId>& right, Span span) {
    const std::size_t merge_index = report_.merge_calls++;
    const std::size_t m1 = left.size(), m2 = right.size();
    MergeStats stats;
    stats.height = span.height;
    stats.first_row = span.first;
    stats.split_row = span.split;
    stats.end_row = span.end;
    stats.left_blocks = m1;
    stats.right_blocks = m2;

    // Similarity matrix on unit key directions; NaN marks pairs involving zero blocks.
    std::vector<double> sim(m1 * m2, std::nan(""));
    double sum = 0.0, sum_sq = 0.0;
    auto& samples = report_.similarity.samples;
    for (std::size_t i = 0; i < m1; ++i) {
      if (!fusable(left[i])) continue;
      auto ki = storage_.key(left[i]);
      for (std::size_t j = 0; j < m2; ++j) {
        if (!fusable(right[j])) continue;
        const double s = std::clamp(dot(ki, storage_.key(right[j])), -1.0, 1.0);
        sim[i * m2 + j] = s;
        samples.push_back(s);
        sum += s;
        sum_sq += s * s;
        ++stats.comparisons;
        if (s > threshold_) ++stats.exceedances;
      }
    }
    if (stats.comparisons > 0) {
      const double n = static_cast<double>(stats.comparisons);
      stats.similarity_mean = sum / n;
      stats.similarity_std = std::sqrt(std::max(0.0, sum_sq / n - stats.similarity_mean * stats.similarity_mean));
    }

    std::vector<bool> absorbed(m2, false);
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < m1; ++i) {
      chosen.clear();
      for (std::size_t j = 0; j < m2; ++j) {
        const double s = sim[i * m2 + j];
        if (!absorbed[j] && s > threshold_) chosen.push_back(j);
      }
      if (chosen.empty()) continue;

      const PhysicalId target = left[i];
      auto key = storage_.key(target);
      auto value = storage_.value(target);
      std::ranges::copy(key, key_sum_.begin());
      std::ranges::copy(value, value_sum_.begin());
      FusionEvent event{merge_index, target, {}};
      for (std::size_t j : chosen) {
        absorbed[j] = true;
        const PhysicalId id = right[j];
        auto rk = storage_.key(id);
        auto rv = storage_.value(id);
        for (std::size_t e = 0; e < key_sum_.size(); ++e) {
          key_sum_[e] += rk[e];
          value_sum_[e] += rv[e];
        }
        event.absorbed.push_back(id);
      }
      normalize(key_sum_);
      normalize(value_sum_);
      std::ranges::copy(key_sum_, key.begin());
      std::ranges::copy(value_sum_, value.begin());
      for (PhysicalId id : event.absorbed) {
        table_.absorb(target, id);
        storage_.evict(id);
      }
      stats.absorbed += event.absorbed.size();
      report_.fused_events.push_back(std::move(event));
    }

    left.reserve(m1 + m2 - stats.absorbed);
    for (std::size_t j = 0; j < m2; ++j) {
      if (!absorbed[j]) left.push_back(right[j]);
    }
    report_.merges.push_back(stats);
  }

  const UnfoldedLayer& keys_;
  PhysicalBlocks& storage_;
  BlockTable& table_;
  double threshold_;
  FusionReport& report_;
  std::vector<double> key_sum_;
  std::vector<double> value_sum_;
};

void check_threshold(double threshold) {
  require(threshold > -1.0 && threshold < 1.0, ErrorKind::kConfig,
          "threshold " + std::to_string(threshold) + " outside (-1, 1)");
}

void check_fresh(const BlockTable& table, const UnfoldedLayer& keys) {
  table.audit();
  require(table.row_sizes() == keys.row_sizes(), ErrorKind::kCorruption,
          "block table layout does not match the unfolded layer");
  require(table.capacity() == keys.slot_count() && table.live_count() == keys.slot_count(),
          ErrorKind::kCorruption, "fast fusion requires an unfused block table");
  for (std::size_t slot = 0; slot < table.slot_count(); ++slot) {
    require(table.physical(slot) == slot, ErrorKind::kCorruption,
            "fast fusion requires an identity block table");
  }
}

// Row ranges [first, end) fused as independent trees.
using Groups = std::vector<std::pair<std::size_t, std::size_t>>;

Groups split_groups(std::size_t first, std::size_t end, std::optional<std::size_t> group_size) {
  Groups groups;
  const std::size_t size = group_size.value_or(end - first);
  for (std::size_t g = first; g < end; g += size) groups.emplace_back(g, std::min(end, g + size));
  return groups;
}

LayerFusion fuse_groups(UnfoldedLayer keys, UnfoldedLayer values, double threshold,
                        BlockTable table, const Groups& groups, Variant variant) {
  check_threshold(threshold);
  require(keys.row_sizes() == values.row_sizes() && keys.r() == values.r(),
          ErrorKind::kInvalidInput, "keys and values are not row-aligned");
  check_fresh(table, keys);

  LayerFusion out;
  out.storage = PhysicalBlocks::from_unfolded(keys, values);
  FusionReport& report = out.report;
  report.layer = keys.layer();
  report.variant = variant;
  report.threshold = threshold;
  report.rows = keys.rows();
  report.blocks_before = keys.slot_count();
  report.similarity.layer = keys.layer();
  report.similarity.source = variant == Variant::kBatch ? SampleSource::kBatch : SampleSource::kChunks;

  TreeFuser fuser(keys, out.storage, table, threshold, report);
  for (const auto& [first, end] : groups) {
    if (first == end) continue;
    std::size_t height = 0;
    fuser.fuse(first, end, height);
    report.tree_depth = std::max(report.tree_depth, height);
  }
  report.blocks_after = table.live_count();
  out.table = std::move(table);
  out.unfolded = {std::move(keys), std::move(values)};
  return out;
}

}  // namespace

LayerFusion fast_fusion(UnfoldedLayer keys, UnfoldedLayer values, double threshold,
                        BlockTable table, std::optional<std::size_t> group_size) {
  require(!group_size || *group_size >= 1, ErrorKind::kConfig, "group size must be >= 1");
  const Groups groups = split_groups(0, keys.rows(), group_size);
  return fuse_groups(std::move(keys), std::move(values), threshold, std::move(table), groups,
                     Variant::kBatch);
}

LayerFusion fast_fusion(UnfoldedLayer keys, UnfoldedLayer values, double threshold,
                        std::optional<std::size_t> group_size) {
  BlockTable table = BlockTable::identity(keys.layer(), keys.row_sizes());
  return fast_fusion(std::move(keys), std::move(values), threshold, std::move(table), group_size);
}

std::size_t CacheFusion::blocks_before() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.report.blocks_before;
  return n;
}

std::size_t CacheFusion::blocks_after() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.report.blocks_after;
  return n;
}

double CacheFusion::compression_ratio() const noexcept {
  const std::size_t after = blocks_after();
  return after == 0 ? 1.0 : static_cast<double>(blocks_before()) / static_cast<double>(after);
}

std::vector<FusionReport> CacheFusion::reports() const {
  std::vector<FusionReport> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.report);
  return out;
}

CacheFusion fuse_batch(const PagedKvCache& cache, const FusionConfig& config, unsigned threads) {
  config.validate();
  require(config.variant == Variant::kBatch, ErrorKind::kConfig, "fuse_batch requires the bff variant");
  CacheFusion result;
  result.layers.resize(cache.dims().layers);
  parallel_for(cache.dims().layers, worker_count(threads), [&](std::size_t layer) {
    auto [keys, values] = unfold_bff(cache, layer);
    const Groups groups = split_groups(0, keys.rows(), config.group_size);
    BlockTable table = BlockTable::identity(layer, keys.row_sizes());
    result.layers[layer] = fuse_groups(std::move(keys), std::move(values), config.threshold,
                                       std::move(table), groups, Variant::kBatch);
  });
  return result;
}

CacheFusion fuse_chunks(const PagedKvCache& cache, const FusionConfig& config,
                        std::size_t chunk_tokens, unsigned threads) {
  config.validate();
  require(config.variant == Variant::kChunks, ErrorKind::kConfig, "fuse_chunks requires the cff variant");
  const std::size_t chunks = chunk_count(cache.dims(), chunk_tokens);
  CacheFusion result;
  result.layers.resize(cache.dims().layers);
  parallel_for(cache.dims().layers, worker_count(threads), [&](std::size_t layer) {
    auto [keys, values] = unfold_cff_batch(cache, layer, chunk_tokens);
    Groups groups;
    for (std::size_t b = 0; b < cache.dims().requests; ++b) {
      for (auto g : split_groups(b * chunks, (b + 1) * chunks, config.group_size)) groups.push_back(g);
    }
    BlockTable table = BlockTable::identity(layer, keys.row_sizes());
    LayerFusion fused = fuse_groups(std::move(keys), std::move(values), config.threshold,
                                    std::move(table), groups, Variant::kChunks);
    fused.report.chunks_per_request = chunks;
    for (PhysicalId id = 0; id < fused.table.capacity(); ++id) {
      if (fused.table.refcount(id) > 1) fused.table.mark_reusable(id);
    }
    result.layers[layer] = std::move(fused);
  });
  return result;
}

double empirical_quantile(std::span<const double> samples, double q) {
  require(!samples.empty(), ErrorKind::kInsufficientData, "quantile of an empty sample set");
  require(q >= 0.0 && q <= 1.0, ErrorKind::kDomain, "quantile level outside [0, 1]");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::ranges::sort(sorted);
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double adapt_threshold(const AdaptPolicy& policy, double achieved_ratio,
                       std::span<const double> similarity_samples, double current) {
  policy.validate();
  if (policy.mode == AdaptPolicy::Mode::kPercentile) {
    require(!similarity_samples.empty(), ErrorKind::kInsufficientData,
            "percentile adaptation needs similarity samples");
    const double q = empirical_quantile(similarity_samples, 1.0 - policy.target);
    return std::clamp(q, policy.min_threshold, policy.max_threshold);
  }
  if (achieved_ratio > policy.target) return std::min(current + policy.step, policy.max_threshold);
  if (achieved_ratio < policy.target) return std::max(current - policy.step, policy.min_threshold);
  return current;
}

double adapt_threshold(const AdaptPolicy& policy, const FusionReport& report, double current) {
  return adapt_threshold(policy, report.compression_ratio(), report.similarity.samples, current);
}

}  // namespace kvfuse
