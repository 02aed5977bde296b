// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/report_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

namespace kvfuse {

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

namespace {

nlohmann::json summary(const SimilaritySampleSet& set) {
  const auto& s = set.samples;
  nlohmann::json j;
  j["count"] = s.size();
  if (s.empty()) return j;
  double sum = 0.0, sum_sq = 0.0;
  for (double x : s) {
    sum += x;
    sum_sq += x * x;
  }
  const double n = static_cast<double>(s.size());
  const double mean = sum / n;
  j["mean"] = mean;
  j["std"] = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
  j["min"] = *std::ranges::min_element(s);
  j["max"] = *std::ranges::max_element(s);
  return j;
}

}  // namespace

nlohmann::json to_json(const FusionReport& report, bool include_samples) {
  nlohmann::json j;
  j["layer"] = report.layer;
  j["variant"] = std::string(to_string(report.variant));
  j["threshold"] = report.threshold;
  j["rows"] = report.rows;
  j["chunks_per_request"] = report.chunks_per_request;
  j["blocks_before"] = report.blocks_before;
  j["blocks_after"] = report.blocks_after;
  j["compression_ratio"] = report.compression_ratio();
  j["merge_calls"] = report.merge_calls;
  j["tree_depth"] = report.tree_depth;
  auto& events = j["fused_events"] = nlohmann::json::array();
  for (const auto& e : report.fused_events) {
    events.push_back({{"merge", e.merge}, {"absorbing", e.absorbing}, {"absorbed", e.absorbed}});
  }
  auto& merges = j["merges"] = nlohmann::json::array();
  for (const auto& m : report.merges) {
    merges.push_back({{"height", m.height},
                      {"rows", {m.first_row, m.split_row, m.end_row}},
                      {"left_blocks", m.left_blocks},
                      {"right_blocks", m.right_blocks},
                      {"comparisons", m.comparisons},
                      {"exceedances", m.exceedances},
                      {"absorbed", m.absorbed},
                      {"similarity_mean", m.similarity_mean},
                      {"similarity_std", m.similarity_std}});
  }
  j["similarity"] = summary(report.similarity);
  if (include_samples) j["similarity"]["samples"] = report.similarity.samples;
  return j;
}

nlohmann::json to_json(const BlockTable& table) {
  nlohmann::json j;
  j["layer"] = table.layer();
  j["row_sizes"] = table.row_sizes();
  j["entries"] = table.entries();
  std::vector<std::size_t> shared;
  for (std::size_t s = 0; s < table.slot_count(); ++s) {
    if (table.shared(s)) shared.push_back(s);
  }
  j["shared_slots"] = shared;
  std::vector<PhysicalId> reusable;
  for (PhysicalId id = 0; id < table.capacity(); ++id) {
    if (table.reusable(id)) reusable.push_back(id);
  }
  j["reusable_blocks"] = reusable;
  j["physical_blocks"] = table.live_count();
  return j;
}

void write_fusion_csv(std::ostream& out, std::span<const FusionReport> reports) {
  out << "layer,variant,threshold,rows,chunks_per_request,blocks_before,blocks_after,"
         "compression_ratio,fused_events,absorbed,merge_calls,tree_depth,similarity_count\n";
  for (const auto& r : reports) {
    out << r.layer << ',' << to_string(r.variant) << ',' << format_double(r.threshold) << ','
        << r.rows << ',' << r.chunks_per_request << ',' << r.blocks_before << ',' << r.blocks_after
        << ',' << format_double(r.compression_ratio()) << ',' << r.fused_events.size() << ','
        << r.absorbed_total() << ',' << r.merge_calls << ',' << r.tree_depth << ','
        << r.similarity.size() << '\n';
  }
}

}  // namespace kvfuse
