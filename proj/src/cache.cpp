// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/cache.hpp"

#include <cmath>
#include <string>

#include "kvfuse/error.hpp"

namespace kvfuse {

void CacheDims::validate() const {
  require(layers > 0 && requests > 0 && blocks > 0 && tokens > 0 && heads > 0 && head_dim > 0,
          ErrorKind::kInvalidInput, "cache dimensions must all be positive");
}

PagedKvCache::PagedKvCache(const CacheDims& dims)
    : dims_(dims), keys_(), values_() {
  dims_.validate();
  keys_.assign(dims_.elements(), 0.0f);
  values_.assign(dims_.elements(), 0.0f);
}

PagedKvCache::PagedKvCache(const CacheDims& dims, std::vector<float> keys, std::vector<float> values)
    : dims_(dims), keys_(std::move(keys)), values_(std::move(values)) {
  dims_.validate();
  const std::size_t expected = dims_.elements();
  require(keys_.size() == expected && values_.size() == expected, ErrorKind::kInvalidInput,
          "key/value tensors must both hold " + std::to_string(expected) + " elements, got " +
              std::to_string(keys_.size()) + " and " + std::to_string(values_.size()));
  for (std::size_t i = 0; i < expected; ++i) {
    if (!std::isfinite(keys_[i]) || !std::isfinite(values_[i])) {
      fail(ErrorKind::kInvalidInput, "non-finite cache entry at element " + std::to_string(i));
    }
  }
}

std::span<const float> PagedKvCache::key_block(std::size_t layer, std::size_t request,
                                               std::size_t block) const {
  require(layer < dims_.layers && request < dims_.requests && block < dims_.blocks,
          ErrorKind::kInvalidInput, "block index out of range");
  return std::span<const float>(keys_).subspan(block_offset(layer, request, block), dims_.r());
}

std::span<const float> PagedKvCache::value_block(std::size_t layer, std::size_t request,
                                                 std::size_t block) const {
  require(layer < dims_.layers && request < dims_.requests && block < dims_.blocks,
          ErrorKind::kInvalidInput, "block index out of range");
  return std::span<const float>(values_).subspan(block_offset(layer, request, block), dims_.r());
}

}  // namespace kvfuse
