// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

// Sequential replay of tree fusion: the merge schedule is expanded into an
// explicit post-order list and replayed on plain vectors, with no recursion
// and no library code beyond the raw cache accessors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include "kvfuse/cache.hpp"

namespace kvfuse::testing {

struct ReplayMerge {
  std::size_t first, split, end;
};

struct ReplayResult {
  std::size_t blocks_after = 0;
  std::size_t merges = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (absorbing slot, absorbed slot)
  std::vector<std::size_t> owner;                          // slot -> surviving slot
};

// Post-order merge schedule of rows [first, end) under the floor(n/2) split.
inline std::vector<ReplayMerge> merge_schedule(std::size_t first, std::size_t end) {
  std::vector<ReplayMerge> order;
  std::vector<std::tuple<std::size_t, std::size_t, bool>> stack{{first, end, false}};
  while (!stack.empty()) {
    auto [a, b, expanded] = stack.back();
    stack.pop_back();
    if (b - a < 2) continue;
    const std::size_t mid = a + (b - a) / 2;
    if (expanded) {
      order.push_back({a, mid, b});
      continue;
    }
    stack.emplace_back(a, b, true);
    stack.emplace_back(mid, b, false);
    stack.emplace_back(a, mid, false);
  }
  return order;
}

// `blocks[slot]` holds the raw key block; rows are consecutive runs of `row_sizes`.
inline ReplayResult replay_fusion(const std::vector<std::vector<double>>& blocks,
                                  const std::vector<std::size_t>& row_sizes, double threshold,
                                  std::optional<std::size_t> group_size = std::nullopt) {
  const std::size_t rows = row_sizes.size();
  std::vector<std::size_t> row_start(rows + 1, 0);
  for (std::size_t i = 0; i < rows; ++i) row_start[i + 1] = row_start[i] + row_sizes[i];

  std::vector<std::vector<double>> dir(blocks.size());
  std::vector<bool> live(blocks.size(), true), usable(blocks.size(), false);
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    double n2 = 0.0;
    for (double x : blocks[s]) n2 += x * x;
    const double n = std::sqrt(n2);
    dir[s] = blocks[s];
    if (n > 0.0) {
      usable[s] = true;
      for (double& x : dir[s]) x /= n;
    }
  }

  ReplayResult out;
  out.owner.resize(blocks.size());
  for (std::size_t s = 0; s < blocks.size(); ++s) out.owner[s] = s;

  const std::size_t size = group_size.value_or(rows);
  for (std::size_t g = 0; g < rows; g += size) {
    const std::size_t g_end = std::min(rows, g + size);
    std::map<std::size_t, std::vector<std::size_t>> lists;  // range start -> surviving slots
    for (std::size_t row = g; row < g_end; ++row) {
      for (std::size_t s = row_start[row]; s < row_start[row + 1]; ++s) lists[row].push_back(s);
    }
    for (const ReplayMerge& m : merge_schedule(g, g_end)) {
      ++out.merges;
      std::vector<std::size_t> left = lists[m.first];
      const std::vector<std::size_t> right = lists[m.split];
      std::vector<bool> taken(right.size(), false);
      // Similarities are frozen at the start of the merge.
      std::vector<std::vector<double>> sim(left.size(), std::vector<double>(right.size(), -2.0));
      for (std::size_t i = 0; i < left.size(); ++i) {
        for (std::size_t j = 0; j < right.size(); ++j) {
          if (!usable[left[i]] || !usable[right[j]]) continue;
          double s = 0.0;
          for (std::size_t e = 0; e < dir[left[i]].size(); ++e) s += dir[left[i]][e] * dir[right[j]][e];
          sim[i][j] = std::clamp(s, -1.0, 1.0);
        }
      }
      for (std::size_t i = 0; i < left.size(); ++i) {
        std::vector<double> acc = dir[left[i]];
        bool any = false;
        for (std::size_t j = 0; j < right.size(); ++j) {
          if (taken[j] || !(sim[i][j] > threshold)) continue;
          taken[j] = true;
          any = true;
          for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += dir[right[j]][e];
          live[right[j]] = false;
          out.pairs.emplace_back(left[i], right[j]);
          for (std::size_t s = 0; s < blocks.size(); ++s) {
            if (out.owner[s] == right[j]) out.owner[s] = left[i];
          }
        }
        if (any) {
          double n2 = 0.0;
          for (double x : acc) n2 += x * x;
          for (double& x : acc) x /= std::sqrt(n2);
          dir[left[i]] = acc;
        }
      }
      for (std::size_t j = 0; j < right.size(); ++j) {
        if (!taken[j]) left.push_back(right[j]);
      }
      lists[m.first] = std::move(left);
      lists.erase(m.split);
    }
  }
  out.blocks_after = static_cast<std::size_t>(std::count(live.begin(), live.end(), true));
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

// Key blocks of one layer in BFF row order (one row per request).
inline std::vector<std::vector<double>> layer_key_blocks(const PagedKvCache& cache, std::size_t layer) {
  const CacheDims& d = cache.dims();
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < d.requests; ++b) {
    for (std::size_t blk = 0; blk < d.blocks; ++blk) {
      auto span = cache.key_block(layer, b, blk);
      out.emplace_back(span.begin(), span.end());
    }
  }
  return out;
}

}  // namespace kvfuse::testing
