// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kvfuse/block_table.hpp"
#include "kvfuse/cache.hpp"
#include "kvfuse/layer_view.hpp"
#include "kvfuse/samples.hpp"
#include "kvfuse/unfold.hpp"

namespace kvfuse {

/// BFF fuses blocks across requests; CFF fuses blocks across the chunks of
/// one request.
enum class Variant { kBatch, kChunks };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view text);

/// Threshold feedback. In target-compression mode `target` is the desired
/// compression ratio; in percentile mode it is the fraction of similarity
/// samples that should exceed the next threshold.
struct AdaptPolicy {
  enum class Mode { kPercentile, kTargetCompression };

  Mode mode = Mode::kTargetCompression;
  double target = 2.0;
  double step = 0.01;
  double min_threshold = -0.99;
  double max_threshold = 0.999;

  void validate() const;
};

struct FusionConfig {
  double threshold = 0.9;
  Variant variant = Variant::kBatch;
  /// Requests (BFF) or chunks (CFF) per fusion tree; unset fuses all rows
  /// of a layer (or all chunks of a request) in one tree.
  std::optional<std::size_t> group_size;
  std::optional<AdaptPolicy> adapt;

  /// Throws kConfig unless threshold lies in (-1, 1) and group_size >= 1.
  void validate() const;
};

/// One absorbing block and the right-side blocks it consumed in one merge.
/// Physical ids equal the logical slot that originally owned the block.
struct FusionEvent {
  std::size_t merge = 0;
  PhysicalId absorbing = 0;
  std::vector<PhysicalId> absorbed;
  bool operator==(const FusionEvent&) const = default;
};

/// Statistics of one tree merge. `height` is 1 when both children are
/// single rows.
struct MergeStats {
  std::size_t height = 0;
  std::size_t first_row = 0;
  std::size_t split_row = 0;
  std::size_t end_row = 0;
  std::size_t left_blocks = 0;
  std::size_t right_blocks = 0;
  std::size_t comparisons = 0;  // similarities computed between fusable blocks
  std::size_t exceedances = 0;  // similarities strictly above the threshold
  std::size_t absorbed = 0;     // right blocks evicted
  double similarity_mean = 0.0;
  double similarity_std = 0.0;  // population standard deviation
  bool operator==(const MergeStats&) const = default;
};

struct FusionReport {
  std::size_t layer = 0;
  Variant variant = Variant::kBatch;
  double threshold = 0.0;
  std::size_t rows = 0;
  std::size_t chunks_per_request = 0;  // C for CFF, 0 for BFF
  std::size_t blocks_before = 0;
  std::size_t blocks_after = 0;
  std::size_t merge_calls = 0;
  std::size_t tree_depth = 0;
  std::vector<FusionEvent> fused_events;
  std::vector<MergeStats> merges;
  SimilaritySampleSet similarity;

  std::size_t absorbed_total() const noexcept;
  double compression_ratio() const noexcept;
  bool operator==(const FusionReport&) const = default;
};

/// Result of fusing one layer. `unfolded` keeps the original per-slot norms,
/// `storage` the surviving physical directions.
struct LayerFusion {
  UnfoldedPair unfolded;
  PhysicalBlocks storage;
  BlockTable table;
  FusionReport report;

  LayerView view() const;
};

/// Tree fast-fusion of one layer.
///
/// Rows are split in half (the odd row goes right) down to single rows. At
/// every merge the cosine matrix between left and right key directions is
/// formed; each left block, in order, absorbs every still-available right
/// block with similarity strictly above `threshold`. The absorbing key
/// direction becomes normalize(own + sum of absorbed), and the value
/// direction is updated with the same indices. Absorbed blocks are evicted
/// and their slots redirected in the table. Zero blocks never fuse.
///
/// `table` must be a fresh identity table over the key layout. With
/// `group_size`, consecutive groups of that many rows form independent trees.
LayerFusion fast_fusion(UnfoldedLayer keys, UnfoldedLayer values, double threshold,
                        BlockTable table, std::optional<std::size_t> group_size = std::nullopt);
LayerFusion fast_fusion(UnfoldedLayer keys, UnfoldedLayer values, double threshold,
                        std::optional<std::size_t> group_size = std::nullopt);

struct CacheFusion {
  std::vector<LayerFusion> layers;

  std::size_t blocks_before() const noexcept;
  std::size_t blocks_after() const noexcept;
  double compression_ratio() const noexcept;
  std::vector<FusionReport> reports() const;
};

/// Batch fusion: every layer is unfolded to (B, p, r) and fused with its own table.
CacheFusion fuse_batch(const PagedKvCache& cache, const FusionConfig& config, unsigned threads = 0);

/// Chunk fusion: every request's chunks form their own trees; shared blocks
/// are additionally marked reusable.
CacheFusion fuse_chunks(const PagedKvCache& cache, const FusionConfig& config,
                        std::size_t chunk_tokens, unsigned threads = 0);

/// Linear-interpolation quantile (numpy's default): position q * (n - 1)
/// in the sorted samples. q in [0, 1].
double empirical_quantile(std::span<const double> samples, double q);

/// Next threshold given the achieved fusion statistics of the last round.
double adapt_threshold(const AdaptPolicy& policy, const FusionReport& report, double current);
double adapt_threshold(const AdaptPolicy& policy, double achieved_ratio,
                       std::span<const double> similarity_samples, double current);

}  // namespace kvfuse
