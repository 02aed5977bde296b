// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/error.hpp"

namespace kvfuse {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid_input";
    case ErrorKind::kAlignment: return "alignment_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kCorruption: return "corruption_error";
    case ErrorKind::kDomain: return "domain_error";
    case ErrorKind::kFormat: return "format_error";
    case ErrorKind::kInsufficientData: return "insufficient_data";
    case ErrorKind::kDivergence: return "divergence_error";
    case ErrorKind::kUndefined: return "undefined_similarity";
    case ErrorKind::kIo: return "io_error";
  }
  return "unknown";
}

}  // namespace kvfuse
