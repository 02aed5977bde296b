// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvfuse/cache.hpp"

namespace kvfuse {

/// Where an unfolded row lives in the source cache.
struct RowOrigin {
  std::size_t request = 0;
  std::size_t first_block = 0;  // block index inside the request
  bool operator==(const RowOrigin&) const = default;
};

/// One layer's keys (or values) laid out as rows of flattened blocks, each
/// block split into a unit direction and its Euclidean norm.
///
/// A row is a request (batch layout) or a chunk of a request (chunk
/// layout). Rows may hold different numbers of blocks. Blocks are addressed
/// by a layer-local logical slot, numbered row-major. An all-zero block keeps
/// a zero direction and norm 0 and is never fused.
class UnfoldedLayer {
 public:
  UnfoldedLayer() = default;

  /// `raw` holds sum(row_sizes) blocks of shape.r() scalars, row-major.
  /// `origins` may be empty, in which case row i is request i starting at block 0.
  UnfoldedLayer(std::size_t layer, BlockShape shape, std::vector<std::size_t> row_sizes,
                std::span<const double> raw, std::vector<RowOrigin> origins = {});

  std::size_t layer() const noexcept { return layer_; }
  const BlockShape& shape() const noexcept { return shape_; }
  std::size_t r() const noexcept { return shape_.r(); }
  std::size_t rows() const noexcept { return row_offsets_.size() - 1; }
  std::size_t slot_count() const noexcept { return norms_.size(); }
  std::size_t blocks_in_row(std::size_t row) const { return row_offsets_.at(row + 1) - row_offsets_[row]; }
  std::size_t row_offset(std::size_t row) const { return row_offsets_.at(row); }
  std::size_t slot(std::size_t row, std::size_t block) const { return row_offsets_.at(row) + block; }
  std::vector<std::size_t> row_sizes() const;
  const RowOrigin& origin(std::size_t row) const { return origins_.at(row); }
  const std::vector<RowOrigin>& origins() const noexcept { return origins_; }

  std::span<const double> direction(std::size_t slot) const {
    return std::span<const double>(directions_).subspan(slot * r(), r());
  }
  std::span<const double> directions() const noexcept { return directions_; }
  double norm(std::size_t slot) const { return norms_.at(slot); }
  std::span<const double> norms() const noexcept { return norms_; }
  bool fusable(std::size_t slot) const { return norms_.at(slot) > 0.0; }

  /// Reconstructs norm * direction for one slot.
  std::vector<double> reconstruct(std::size_t slot) const;

 private:
  std::size_t layer_ = 0;
  BlockShape shape_{};
  std::vector<std::size_t> row_offsets_{0};
  std::vector<RowOrigin> origins_;
  std::vector<double> directions_;
  std::vector<double> norms_;
};

struct UnfoldedPair {
  UnfoldedLayer keys;
  UnfoldedLayer values;
};

/// Batch layout (B, p, r): one row per request.
UnfoldedPair unfold_bff(const PagedKvCache& cache, std::size_t layer);

/// Number of chunks C = floor(p * t / chunk_tokens) for a request of p
/// blocks of t tokens. Throws kAlignment unless chunk_tokens is a positive
/// multiple of t, and kInvalidInput if it exceeds p * t.
std::size_t chunk_count(const CacheDims& dims, std::size_t chunk_tokens);

/// Chunk layout (C, p/C, r) of one request. When C does not divide p the
/// trailing blocks join the last chunk.
UnfoldedPair unfold_cff(const PagedKvCache& cache, std::size_t layer, std::size_t chunk_tokens,
                        std::size_t request = 0);

/// Chunk layout of every request, concatenated: B * C rows, request-major.
UnfoldedPair unfold_cff_batch(const PagedKvCache& cache, std::size_t layer,
                              std::size_t chunk_tokens);

/// Cosine of the angle between two vectors, clamped to [-1, 1].
/// Throws kUndefined if either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace kvfuse
