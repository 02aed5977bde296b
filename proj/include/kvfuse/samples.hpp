// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace kvfuse {

enum class SampleSource { kBatch, kChunks, kSynthetic };

std::string_view to_string(SampleSource source);

/// Cosine-similarity observations x_i in [-1, 1] for one layer.
struct SimilaritySampleSet {
  std::vector<double> samples;
  std::size_t layer = 0;
  SampleSource source = SampleSource::kSynthetic;

  std::size_t size() const noexcept { return samples.size(); }
  /// Throws kInsufficientData when empty and kInvalidInput for values outside [-1, 1].
  void validate() const;
  bool operator==(const SimilaritySampleSet&) const = default;
};

}  // namespace kvfuse
