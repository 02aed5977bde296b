// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace kvfuse {

/// Worker count for `requested` threads (0 = hardware concurrency), capped
/// by the KVFUSE_THREADS environment variable when it is set.
unsigned worker_count(unsigned requested = 0);

/// Runs fn(0..n-1) on up to `threads` workers. The first exception by index
/// is rethrown after all workers finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace kvfuse
