// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace kvfuse {

using PhysicalId = std::uint32_t;

/// Per-layer indirection from logical block slots (row, block) to physical
/// blocks. Physical ids live in [0, capacity); a fresh table maps slot i to
/// physical block i. Single writer; readers may share a table between
/// mutations.
class BlockTable {
 public:
  BlockTable() = default;

  /// Identity table: every slot owns its own physical block.
  static BlockTable identity(std::size_t layer, const std::vector<std::size_t>& row_sizes);

  /// Table from an explicit slot -> physical mapping. Refcounts and shared
  /// flags are derived. Throws kCorruption for ids outside [0, capacity).
  BlockTable(std::size_t layer, const std::vector<std::size_t>& row_sizes,
             std::vector<PhysicalId> entries, std::size_t capacity);

  std::size_t layer() const noexcept { return layer_; }
  std::size_t rows() const noexcept { return row_offsets_.size() - 1; }
  std::size_t blocks_in_row(std::size_t row) const { return row_offsets_.at(row + 1) - row_offsets_[row]; }
  std::size_t slot(std::size_t row, std::size_t block) const { return row_offsets_.at(row) + block; }
  std::size_t slot_count() const noexcept { return entries_.size(); }
  std::vector<std::size_t> row_sizes() const;
  std::size_t capacity() const noexcept { return refcount_.size(); }

  PhysicalId physical(std::size_t slot) const { return entries_.at(slot); }
  const std::vector<PhysicalId>& entries() const noexcept { return entries_; }
  bool shared(std::size_t slot) const { return shared_.at(slot); }
  std::uint32_t refcount(PhysicalId id) const { return refcount_.at(id); }
  bool live(PhysicalId id) const { return refcount_.at(id) > 0; }
  std::size_t live_count() const noexcept { return live_; }
  /// Slots currently mapped to `id`, in the order they were attached.
  const std::vector<std::size_t>& members(PhysicalId id) const { return members_.at(id); }

  /// Blocks whose computation may be reused across chunks.
  bool reusable(PhysicalId id) const { return reusable_.at(id); }
  void mark_reusable(PhysicalId id);

  /// Redirects every slot of `absorbed` to `target` and evicts `absorbed`.
  /// Both must be live and distinct.
  void absorb(PhysicalId target, PhysicalId absorbed);

  /// Checks every invariant; throws kCorruption describing the first violation.
  void audit() const;

  bool operator==(const BlockTable&) const = default;

 private:
  void set_flags(PhysicalId id);

  std::size_t layer_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<PhysicalId> entries_;
  std::vector<bool> shared_;
  std::vector<std::uint32_t> refcount_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<bool> reusable_;
  std::size_t live_ = 0;
};

}  // namespace kvfuse
