// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "kvfuse/cache.hpp"

namespace kvfuse {

/// KVFF layout, all integers and floats little-endian:
///
///   offset 0   "KVFF" magic
///   offset 4   u32 format version (kKvffVersion)
///   offset 8   u32 L, B, p, t, h, d
///   offset 32  f32 keys[L][B][p][t][h][d]
///              f32 values[L][B][p][t][h][d]
inline constexpr std::uint32_t kKvffVersion = 1;
inline constexpr std::size_t kKvffHeaderBytes = 32;

void write_kvff(std::ostream& out, const PagedKvCache& cache);
/// Throws FormatError (with byte offset) on bad magic, unsupported version,
/// zero extents or truncation.
PagedKvCache read_kvff(std::istream& in);

void save_cache(const PagedKvCache& cache, const std::filesystem::path& path);
PagedKvCache load_cache(const std::filesystem::path& path);

/// Expected total file size for the given dimensions.
std::uint64_t kvff_file_size(const CacheDims& dims);

}  // namespace kvfuse
