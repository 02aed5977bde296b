// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kvfuse {

/// Token/head/embedding extent of one cache block. A block flattens to
/// r = tokens * heads * head_dim scalars, token-major, then head, then
/// embedding.
struct BlockShape {
  std::size_t tokens = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;

  std::size_t r() const noexcept { return tokens * heads * head_dim; }
  /// Offset of (token, head, 0) inside a flattened block.
  std::size_t offset(std::size_t token, std::size_t head) const noexcept {
    return (token * heads + head) * head_dim;
  }
  bool operator==(const BlockShape&) const = default;
};

/// Shape of a paged cache: L layers of a (B, p, t, h, d) tensor.
struct CacheDims {
  std::size_t layers = 1;    // L
  std::size_t requests = 1;  // B
  std::size_t blocks = 1;    // p, blocks per request
  std::size_t tokens = 1;    // t, tokens per block
  std::size_t heads = 1;     // h
  std::size_t head_dim = 1;  // d

  BlockShape block_shape() const noexcept { return {tokens, heads, head_dim}; }
  std::size_t r() const noexcept { return tokens * heads * head_dim; }
  std::size_t blocks_per_layer() const noexcept { return requests * blocks; }
  std::size_t elements_per_layer() const noexcept { return blocks_per_layer() * r(); }
  std::size_t elements() const noexcept { return layers * elements_per_layer(); }

  /// Throws kInvalidInput unless every extent is positive.
  void validate() const;
  bool operator==(const CacheDims&) const = default;
};

/// Keys and values stored as 32-bit floats in the KVFF element order
/// (layer, request, block, token, head, embedding). Immutable once built.
class PagedKvCache {
 public:
  /// Zero-filled cache.
  explicit PagedKvCache(const CacheDims& dims);
  /// Takes ownership of both tensors; rejects size mismatches and non-finite entries.
  PagedKvCache(const CacheDims& dims, std::vector<float> keys, std::vector<float> values);

  const CacheDims& dims() const noexcept { return dims_; }
  std::span<const float> keys() const noexcept { return keys_; }
  std::span<const float> values() const noexcept { return values_; }

  std::size_t block_offset(std::size_t layer, std::size_t request, std::size_t block) const noexcept {
    return ((layer * dims_.requests + request) * dims_.blocks + block) * dims_.r();
  }
  std::span<const float> key_block(std::size_t layer, std::size_t request, std::size_t block) const;
  std::span<const float> value_block(std::size_t layer, std::size_t request, std::size_t block) const;

  bool operator==(const PagedKvCache&) const = default;

 private:
  CacheDims dims_;
  std::vector<float> keys_;
  std::vector<float> values_;
};

}  // namespace kvfuse
