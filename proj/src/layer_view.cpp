// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/layer_view.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "kvfuse/error.hpp"

namespace kvfuse {

PhysicalBlocks PhysicalBlocks::from_unfolded(const UnfoldedLayer& keys, const UnfoldedLayer& values) {
  require(keys.row_sizes() == values.row_sizes() && keys.r() == values.r(),
          ErrorKind::kInvalidInput, "keys and values are not row-aligned");
  PhysicalBlocks blocks;
  blocks.r_ = keys.r();
  auto kd = keys.directions();
  auto vd = values.directions();
  blocks.keys_.assign(kd.begin(), kd.end());
  blocks.values_.assign(vd.begin(), vd.end());
  blocks.present_.assign(keys.slot_count(), true);
  blocks.present_count_ = keys.slot_count();
  return blocks;
}

void PhysicalBlocks::evict(PhysicalId id) {
  require(present(id), ErrorKind::kCorruption, "evicting absent block " + std::to_string(id));
  std::ranges::fill(key(id), 0.0);
  std::ranges::fill(value(id), 0.0);
  present_[id] = false;
  --present_count_;
}

std::vector<std::size_t> LayerView::rows_of_request(std::size_t request) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < origins_.size(); ++i) {
    if (origins_[i].request == request) rows.push_back(i);
  }
  std::ranges::stable_sort(rows, {}, [&](std::size_t row) { return origins_[row].first_block; });
  return rows;
}

void LayerView::assemble(std::size_t slot, const std::vector<double>& dirs,
                         const std::vector<double>& norms, std::span<double> out) const {
  const std::size_t r = shape_.r();
  require(out.size() == r, ErrorKind::kInvalidInput, "output block has the wrong length");
  const double* dir = dirs.data() + slot_store_.at(slot) * r;
  const double norm = norms[slot];
  for (std::size_t i = 0; i < r; ++i) out[i] = norm * dir[i];
}

void LayerView::key_block(std::size_t slot, std::span<double> out) const {
  assemble(slot, key_dirs_, key_norms_, out);
}

void LayerView::value_block(std::size_t slot, std::span<double> out) const {
  assemble(slot, value_dirs_, value_norms_, out);
}

std::vector<double> LayerView::request_tensor(std::size_t request, bool keys) const {
  const std::size_t r = shape_.r();
  std::vector<double> out;
  for (std::size_t row : rows_of_request(request)) {
    for (std::size_t b = 0; b < blocks_in_row(row); ++b) {
      const std::size_t at = out.size();
      out.resize(at + r);
      std::span<double> dst(out.data() + at, r);
      if (keys) {
        key_block(slot(row, b), dst);
      } else {
        value_block(slot(row, b), dst);
      }
    }
  }
  return out;
}

std::vector<double> LayerView::request_keys(std::size_t request) const {
  return request_tensor(request, true);
}

std::vector<double> LayerView::request_values(std::size_t request) const {
  return request_tensor(request, false);
}

LayerView refold(const UnfoldedLayer& keys, const UnfoldedLayer& values,
                 const PhysicalBlocks& storage, const BlockTable& table) {
  const auto sizes = keys.row_sizes();
  require(sizes == values.row_sizes() && keys.r() == values.r(), ErrorKind::kInvalidInput,
          "keys and values are not row-aligned");
  require(table.row_sizes() == sizes, ErrorKind::kCorruption,
          "block table layout does not match the unfolded layer");
  require(storage.r() == keys.r(), ErrorKind::kCorruption, "storage block width mismatch");
  table.audit();

  LayerView view;
  view.layer_ = keys.layer();
  view.shape_ = keys.shape();
  for (std::size_t s : sizes) view.row_offsets_.push_back(view.row_offsets_.back() + s);
  view.origins_ = keys.origins();
  auto kn = keys.norms();
  auto vn = values.norms();
  view.key_norms_.assign(kn.begin(), kn.end());
  view.value_norms_.assign(vn.begin(), vn.end());

  constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> store_of(table.capacity(), kUnassigned);
  view.slot_store_.resize(table.slot_count());
  for (std::size_t slot = 0; slot < table.slot_count(); ++slot) {
    const PhysicalId id = table.physical(slot);
    if (!storage.present(id)) {
      fail(ErrorKind::kCorruption,
           "slot " + std::to_string(slot) + " maps to physical block " + std::to_string(id) +
               " which is not in storage");
    }
    if (store_of[id] == kUnassigned) {
      store_of[id] = view.stored_++;
      auto k = storage.key(id);
      auto v = storage.value(id);
      view.key_dirs_.insert(view.key_dirs_.end(), k.begin(), k.end());
      view.value_dirs_.insert(view.value_dirs_.end(), v.begin(), v.end());
    }
    view.slot_store_[slot] = store_of[id];
  }
  return view;
}

LayerView refold(const UnfoldedLayer& keys, const UnfoldedLayer& values, const BlockTable& table) {
  return refold(keys, values, PhysicalBlocks::from_unfolded(keys, values), table);
}

}  // namespace kvfuse
