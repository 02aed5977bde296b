// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvfuse/block_table.hpp"
#include "kvfuse/unfold.hpp"

namespace kvfuse {

/// Key and value unit directions addressed by physical block id.
class PhysicalBlocks {
 public:
  PhysicalBlocks() = default;

  /// One physical block per logical slot, seeded from the unfolded directions.
  static PhysicalBlocks from_unfolded(const UnfoldedLayer& keys, const UnfoldedLayer& values);

  std::size_t r() const noexcept { return r_; }
  std::size_t capacity() const noexcept { return present_.size(); }
  bool present(PhysicalId id) const { return id < present_.size() && present_[id]; }
  std::size_t present_count() const noexcept { return present_count_; }

  std::span<const double> key(PhysicalId id) const {
    return std::span<const double>(keys_).subspan(std::size_t{id} * r_, r_);
  }
  std::span<const double> value(PhysicalId id) const {
    return std::span<const double>(values_).subspan(std::size_t{id} * r_, r_);
  }
  std::span<double> key(PhysicalId id) { return std::span<double>(keys_).subspan(std::size_t{id} * r_, r_); }
  std::span<double> value(PhysicalId id) {
    return std::span<double>(values_).subspan(std::size_t{id} * r_, r_);
  }

  /// Drops a block; its directions are zeroed and it may no longer be referenced.
  void evict(PhysicalId id);

 private:
  std::size_t r_ = 0;
  std::vector<double> keys_;
  std::vector<double> values_;
  std::vector<bool> present_;
  std::size_t present_count_ = 0;
};

/// Materialized layer for attention: each distinct physical direction is
/// stored once, and every logical slot is rebuilt as its own norm times the
/// direction of the physical block it maps to.
class LayerView {
 public:
  std::size_t layer() const noexcept { return layer_; }
  const BlockShape& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return origins_.size(); }
  std::size_t blocks_in_row(std::size_t row) const { return row_offsets_.at(row + 1) - row_offsets_[row]; }
  std::size_t slot(std::size_t row, std::size_t block) const { return row_offsets_.at(row) + block; }
  std::size_t slot_count() const noexcept { return slot_store_.size(); }
  const RowOrigin& origin(std::size_t row) const { return origins_.at(row); }
  /// Number of direction pairs actually held in storage.
  std::size_t stored_blocks() const noexcept { return stored_; }
  std::size_t store_index(std::size_t slot) const { return slot_store_.at(slot); }

  /// Rows of a request in block order. Empty if the request has no rows.
  std::vector<std::size_t> rows_of_request(std::size_t request) const;

  /// norm(slot) * direction(physical(slot)) written into `out` (size r).
  void key_block(std::size_t slot, std::span<double> out) const;
  void value_block(std::size_t slot, std::span<double> out) const;

  /// All blocks of a request concatenated in cache order (blocks, t, h, d).
  std::vector<double> request_keys(std::size_t request) const;
  std::vector<double> request_values(std::size_t request) const;

 private:
  friend LayerView refold(const UnfoldedLayer&, const UnfoldedLayer&, const PhysicalBlocks&,
                          const BlockTable&);

  void assemble(std::size_t slot, const std::vector<double>& dirs, const std::vector<double>& norms,
                std::span<double> out) const;
  std::vector<double> request_tensor(std::size_t request, bool keys) const;

  std::size_t layer_ = 0;
  BlockShape shape_{};
  std::vector<std::size_t> row_offsets_{0};
  std::vector<RowOrigin> origins_;
  std::vector<std::size_t> slot_store_;
  std::vector<double> key_norms_;
  std::vector<double> value_norms_;
  std::vector<double> key_dirs_;
  std::vector<double> value_dirs_;
  std::size_t stored_ = 0;
};

/// Builds the attention view of a (possibly fused) layer. Throws kCorruption
/// if the table fails its audit, disagrees with the unfolded row layout, or
/// references a block absent from `storage`.
LayerView refold(const UnfoldedLayer& keys, const UnfoldedLayer& values,
                 const PhysicalBlocks& storage, const BlockTable& table);

/// Same, with storage seeded from the unfolded directions themselves.
LayerView refold(const UnfoldedLayer& keys, const UnfoldedLayer& values, const BlockTable& table);

}  // namespace kvfuse
