// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/block_table.hpp"

#include <string>

#include "kvfuse/error.hpp"

namespace kvfuse {

BlockTable BlockTable::identity(std::size_t layer, const std::vector<std::size_t>& row_sizes) {
  std::size_t slots = 0;
  for (std::size_t s : row_sizes) slots += s;
  std::vector<PhysicalId> entries(slots);
  for (std::size_t i = 0; i < slots; ++i) entries[i] = static_cast<PhysicalId>(i);
  return BlockTable(layer, row_sizes, std::move(entries), slots);
}

BlockTable::BlockTable(std::size_t layer, const std::vector<std::size_t>& row_sizes,
                       std::vector<PhysicalId> entries, std::size_t capacity)
    : layer_(layer), entries_(std::move(entries)) {
  for (std::size_t s : row_sizes) row_offsets_.push_back(row_offsets_.back() + s);
  require(row_offsets_.back() == entries_.size(), ErrorKind::kCorruption,
          "block table has " + std::to_string(entries_.size()) + " entries for " +
              std::to_string(row_offsets_.back()) + " logical slots");
  refcount_.assign(capacity, 0);
  members_.resize(capacity);
  reusable_.assign(capacity, false);
  shared_.assign(entries_.size(), false);
  for (std::size_t slot = 0; slot < entries_.size(); ++slot) {
    const PhysicalId id = entries_[slot];
    require(id < capacity, ErrorKind::kCorruption,
            "slot " + std::to_string(slot) + " maps to dangling physical block " + std::to_string(id));
    if (refcount_[id]++ == 0) ++live_;
    members_[id].push_back(slot);
  }
  for (PhysicalId id = 0; id < capacity; ++id) set_flags(id);
}

std::vector<std::size_t> BlockTable::row_sizes() const {
  std::vector<std::size_t> sizes(rows());
  for (std::size_t i = 0; i < sizes.size(); ++i) sizes[i] = blocks_in_row(i);
  return sizes;
}

void BlockTable::mark_reusable(PhysicalId id) {
  require(id < capacity() && live(id), ErrorKind::kCorruption,
          "cannot mark evicted block " + std::to_string(id));
  reusable_[id] = true;
}

void BlockTable::absorb(PhysicalId target, PhysicalId absorbed) {
  require(target < capacity() && absorbed < capacity() && target != absorbed && live(target) &&
              live(absorbed),
          ErrorKind::kCorruption,
          "invalid absorb of block " + std::to_string(absorbed) + " into " + std::to_string(target));
  auto& moved = members_[absorbed];
  for (std::size_t slot : moved) entries_[slot] = target;
  members_[target].insert(members_[target].end(), moved.begin(), moved.end());
  refcount_[target] += refcount_[absorbed];
  refcount_[absorbed] = 0;
  moved.clear();
  reusable_[absorbed] = false;
  --live_;
  set_flags(target);
}

void BlockTable::set_flags(PhysicalId id) {
  const bool is_shared = refcount_[id] > 1;
  for (std::size_t slot : members_[id]) shared_[slot] = is_shared;
}

void BlockTable::audit() const {
  std::vector<std::uint32_t> counted(capacity(), 0);
  for (std::size_t slot = 0; slot < entries_.size(); ++slot) {
    const PhysicalId id = entries_[slot];
    if (id >= capacity() || refcount_[id] == 0) {
      fail(ErrorKind::kCorruption,
           "slot " + std::to_string(slot) + " maps to dangling physical block " + std::to_string(id));
    }
    ++counted[id];
  }
  std::size_t live = 0;
  for (PhysicalId id = 0; id < capacity(); ++id) {
    if (counted[id] != refcount_[id]) {
      fail(ErrorKind::kCorruption, "refcount mismatch on physical block " + std::to_string(id) +
                                       ": stored " + std::to_string(refcount_[id]) + ", counted " +
                                       std::to_string(counted[id]));
    }
    if (members_[id].size() != refcount_[id]) {
      fail(ErrorKind::kCorruption, "member list of block " + std::to_string(id) + " is stale");
    }
    for (std::size_t slot : members_[id]) {
      if (entries_.at(slot) != id) {
        fail(ErrorKind::kCorruption, "member list of block " + std::to_string(id) + " is stale");
      }
    }
    if (refcount_[id] > 0) ++live;
    if (refcount_[id] == 0 && reusable_[id]) {
      fail(ErrorKind::kCorruption, "evicted block " + std::to_string(id) + " marked reusable");
    }
  }
  if (live != live_) fail(ErrorKind::kCorruption, "live block count is stale");
  for (std::size_t slot = 0; slot < entries_.size(); ++slot) {
    if (shared_[slot] != (refcount_[entries_[slot]] > 1)) {
      fail(ErrorKind::kCorruption, "shared flag of slot " + std::to_string(slot) + " is stale");
    }
  }
}

}  // namespace kvfuse
