// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/unfold.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kvfuse/error.hpp"

namespace kvfuse {

UnfoldedLayer::UnfoldedLayer(std::size_t layer, BlockShape shape, std::vector<std::size_t> row_sizes,
                             std::span<const double> raw, std::vector<RowOrigin> origins)
    : layer_(layer), shape_(shape), origins_(std::move(origins)) {
  require(shape_.r() > 0, ErrorKind::kInvalidInput, "block shape must be non-empty");
  row_offsets_.reserve(row_sizes.size() + 1);
  for (std::size_t size : row_sizes) row_offsets_.push_back(row_offsets_.back() + size);
  const std::size_t slots = row_offsets_.back();
  const std::size_t width = shape_.r();
  require(raw.size() == slots * width, ErrorKind::kInvalidInput,
          "raw block data does not match row sizes");
  if (origins_.empty()) {
    origins_.resize(row_sizes.size());
    for (std::size_t i = 0; i < origins_.size(); ++i) origins_[i] = {i, 0};
  }
  require(origins_.size() == row_sizes.size(), ErrorKind::kInvalidInput,
          "one origin per row required");

  directions_.assign(raw.begin(), raw.end());
  norms_.resize(slots);
  for (std::size_t s = 0; s < slots; ++s) {
    std::span<double> block(directions_.data() + s * width, width);
    double sum_sq = 0.0;
    for (double x : block) {
      require(std::isfinite(x), ErrorKind::kInvalidInput,
              "non-finite entry in block " + std::to_string(s));
      sum_sq += x * x;
    }
    const double norm = std::sqrt(sum_sq);
    norms_[s] = norm;
    if (norm > 0.0) {
      for (double& x : block) x /= norm;
    }
  }
}

std::vector<std::size_t> UnfoldedLayer::row_sizes() const {
  std::vector<std::size_t> sizes(rows());
  for (std::size_t i = 0; i < sizes.size(); ++i) sizes[i] = blocks_in_row(i);
  return sizes;
}

std::vector<double> UnfoldedLayer::reconstruct(std::size_t slot) const {
  auto dir = direction(slot);
  std::vector<double> out(dir.begin(), dir.end());
  const double n = norm(slot);
  for (double& x : out) x *= n;
  return out;
}

namespace {

void check_layer(const PagedKvCache& cache, std::size_t layer) {
  require(layer < cache.dims().layers, ErrorKind::kInvalidInput,
          "layer " + std::to_string(layer) + " out of range");
}

// Copies a run of consecutive blocks of one request into `out`, widened to double.
void append_blocks(std::span<const float> tensor, std::size_t offset, std::size_t count,
                   std::vector<double>& out) {
  auto src = tensor.subspan(offset, count);
  out.insert(out.end(), src.begin(), src.end());
}

UnfoldedPair build_chunks(const PagedKvCache& cache, std::size_t layer, std::size_t chunk_tokens,
                          std::size_t first_request, std::size_t request_count) {
  check_layer(cache, layer);
  const CacheDims& dims = cache.dims();
  const std::size_t chunks = chunk_count(dims, chunk_tokens);
  const std::size_t per_chunk = dims.blocks / chunks;
  const std::size_t r = dims.r();

  std::vector<std::size_t> sizes;
  std::vector<RowOrigin> origins;
  std::vector<double> keys, values;
  keys.reserve(request_count * dims.blocks * r);
  values.reserve(request_count * dims.blocks * r);
  for (std::size_t b = first_request; b < first_request + request_count; ++b) {
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t first = c * per_chunk;
      const std::size_t count = (c + 1 == chunks) ? dims.blocks - first : per_chunk;
      sizes.push_back(count);
      origins.push_back({b, first});
      const std::size_t offset = cache.block_offset(layer, b, first);
      append_blocks(cache.keys(), offset, count * r, keys);
      append_blocks(cache.values(), offset, count * r, values);
    }
  }
  return {UnfoldedLayer(layer, dims.block_shape(), sizes, keys, origins),
          UnfoldedLayer(layer, dims.block_shape(), sizes, values, origins)};
}

}  // namespace

UnfoldedPair unfold_bff(const PagedKvCache& cache, std::size_t layer) {
  check_layer(cache, layer);
  const CacheDims& dims = cache.dims();
  const std::size_t offset = cache.block_offset(layer, 0, 0);
  const std::size_t count = dims.elements_per_layer();
  std::vector<double> keys, values;
  keys.reserve(count);
  values.reserve(count);
  append_blocks(cache.keys(), offset, count, keys);
  append_blocks(cache.values(), offset, count, values);
  std::vector<std::size_t> sizes(dims.requests, dims.blocks);
  return {UnfoldedLayer(layer, dims.block_shape(), sizes, keys),
          UnfoldedLayer(layer, dims.block_shape(), sizes, values)};
}

std::size_t chunk_count(const CacheDims& dims, std::size_t chunk_tokens) {
  require(chunk_tokens > 0 && chunk_tokens % dims.tokens == 0, ErrorKind::kAlignment,
          "chunk size " + std::to_string(chunk_tokens) + " is not a positive multiple of " +
              std::to_string(dims.tokens) + " tokens per block");
  const std::size_t request_tokens = dims.blocks * dims.tokens;
  require(chunk_tokens <= request_tokens, ErrorKind::kInvalidInput,
          "chunk size " + std::to_string(chunk_tokens) + " exceeds the " +
              std::to_string(request_tokens) + " tokens of a request");
  return request_tokens / chunk_tokens;
}

UnfoldedPair unfold_cff(const PagedKvCache& cache, std::size_t layer, std::size_t chunk_tokens,
                        std::size_t request) {
  require(request < cache.dims().requests, ErrorKind::kInvalidInput,
          "request " + std::to_string(request) + " out of range");
  return build_chunks(cache, layer, chunk_tokens, request, 1);
}

UnfoldedPair unfold_cff_batch(const PagedKvCache& cache, std::size_t layer,
                              std::size_t chunk_tokens) {
  return build_chunks(cache, layer, chunk_tokens, 0, cache.dims().requests);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kInvalidInput, "cosine of vectors of different length");
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  require(aa > 0.0 && bb > 0.0, ErrorKind::kUndefined, "cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

}  // namespace kvfuse
