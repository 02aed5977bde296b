// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "kvfuse/block_table.hpp"
#include "kvfuse/fusion.hpp"

namespace kvfuse {

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

/// FusionReport as JSON. Raw similarity samples are only emitted when
/// `include_samples` is set; a summary (count/mean/std/min/max) always is.
nlohmann::json to_json(const FusionReport& report, bool include_samples = false);
nlohmann::json to_json(const BlockTable& table);

/// One row per layer.
void write_fusion_csv(std::ostream& out, std::span<const FusionReport> reports);

}  // namespace kvfuse
