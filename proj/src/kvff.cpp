// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/kvff.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

#include "kvfuse/error.hpp"

namespace kvfuse {

namespace {

constexpr std::array<char, 4> kMagic = {'K', 'V', 'F', 'F'};

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

void write_floats(std::ostream& out, std::span<const float> data) {
  constexpr std::size_t kChunk = 1 << 16;
  std::vector<char> buf;
  buf.reserve(kChunk * 4);
  for (std::size_t i = 0; i < data.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - i);
    buf.resize(n * 4);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(buf.data(), data.data() + i, n * 4);
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        const auto bits = std::bit_cast<std::uint32_t>(data[i + k]);
        for (int b = 0; b < 4; ++b) buf[k * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
      }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

// Reads `count` floats; `offset` tracks the byte position for error messages.
std::vector<float> read_floats(std::istream& in, std::size_t count, std::uint64_t& offset,
                               std::uint64_t expected_total) {
  std::vector<float> data(count);
  constexpr std::size_t kChunk = 1 << 16;
  std::vector<unsigned char> buf(kChunk * 4);
  for (std::size_t i = 0; i < count; i += kChunk) {
    const std::size_t n = std::min(kChunk, count - i);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    const auto got = static_cast<std::uint64_t>(in.gcount());
    if (got != n * 4) {
      throw FormatError("truncated KVFF file: expected " + std::to_string(expected_total) +
                            " bytes, got " + std::to_string(offset + got),
                        offset + got);
    }
    for (std::size_t k = 0; k < n; ++k) {
      data[i + k] = std::bit_cast<float>(get_u32(buf.data() + 4 * k));
    }
    offset += got;
  }
  return data;
}

}  // namespace

std::uint64_t kvff_file_size(const CacheDims& dims) {
  return kKvffHeaderBytes + 2ull * 4ull * static_cast<std::uint64_t>(dims.elements());
}

void write_kvff(std::ostream& out, const PagedKvCache& cache) {
  const CacheDims& d = cache.dims();
  std::vector<char> header(kMagic.begin(), kMagic.end());
  put_u32(header, kKvffVersion);
  for (std::size_t v : {d.layers, d.requests, d.blocks, d.tokens, d.heads, d.head_dim}) {
    require(v <= std::numeric_limits<std::uint32_t>::max(), ErrorKind::kInvalidInput,
            "dimension does not fit the KVFF u32 header");
    put_u32(header, static_cast<std::uint32_t>(v));
  }
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_floats(out, cache.keys());
  write_floats(out, cache.values());
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing KVFF stream");
}

PagedKvCache read_kvff(std::istream& in) {
  std::array<unsigned char, kKvffHeaderBytes> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got < 4 || std::memcmp(header.data(), kMagic.data(), 4) != 0) {
    if (got >= 4) throw FormatError("bad KVFF magic", 0);
    throw FormatError("truncated KVFF header: expected " + std::to_string(kKvffHeaderBytes) +
                          " bytes, got " + std::to_string(got),
                      got);
  }
  if (got >= 8) {
    const std::uint32_t version = get_u32(header.data() + 4);
    if (version != kKvffVersion) {
      throw FormatError("unsupported KVFF version " + std::to_string(version) + " (expected " +
                            std::to_string(kKvffVersion) + ")",
                        4);
    }
  }
  if (got < kKvffHeaderBytes) {
    throw FormatError("truncated KVFF header: expected " + std::to_string(kKvffHeaderBytes) +
                          " bytes, got " + std::to_string(got),
                      got);
  }
  std::array<std::size_t, 6> ext{};
  for (std::size_t i = 0; i < ext.size(); ++i) {
    ext[i] = get_u32(header.data() + 8 + 4 * i);
    if (ext[i] == 0) throw FormatError("zero extent in KVFF header", 8 + 4 * i);
  }
  const CacheDims dims{ext[0], ext[1], ext[2], ext[3], ext[4], ext[5]};
  const std::uint64_t total = kvff_file_size(dims);
  std::uint64_t offset = kKvffHeaderBytes;
  auto keys = read_floats(in, dims.elements(), offset, total);
  auto values = read_floats(in, dims.elements(), offset, total);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after KVFF payload of " + std::to_string(total) + " bytes", total);
  }
  return PagedKvCache(dims, std::move(keys), std::move(values));
}

void save_cache(const PagedKvCache& cache, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_kvff(out, cache);
}

PagedKvCache load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  return read_kvff(in);
}

}  // namespace kvfuse
