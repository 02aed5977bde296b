// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kvfuse {

enum class ErrorKind {
  kInvalidInput,     // non-finite tensor entries, bad shapes
  kAlignment,        // chunk size not aligned to block boundaries
  kConfig,           // out-of-domain configuration values
  kCorruption,       // block table or storage inconsistency
  kDomain,           // mathematical domain violations
  kFormat,           // KVFF parse failures
  kInsufficientData, // not enough samples for a statistic
  kDivergence,       // prediction outside its validity regime
  kUndefined,        // quantity undefined for the given input (e.g. zero-vector cosine)
  kIo,               // filesystem failures
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// KVFF parse failure; carries the byte offset at which the reader gave up.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error(ErrorKind::kFormat, message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace kvfuse
