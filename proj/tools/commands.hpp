// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kvfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;

/// Runs one invocation. `args` excludes the program name. Reports go to
/// `out` (or --out files); errors go to `err` as single-line JSON.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "a,b,c" or "start:stop:step" (stop inclusive within step/1e6).
std::vector<double> parse_grid(const std::string& text);

}  // namespace kvfuse::cli
