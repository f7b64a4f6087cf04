#pragma once

#include <cstdint>
#include <functional>

namespace lsanet {

/// Worker count: LSANET_THREADS if set (clamped to >= 1), else hardware concurrency.
int max_threads();

/// Runs fn(begin, end) over a static partition of [0, n). Chunk boundaries depend
/// only on (n, thread count), so results of disjoint-write kernels are identical
/// across runs and per-thread partials can be combined in a fixed order.
/// Runs inline when n < min_parallel or only one worker is available.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t min_parallel = 4096);

/// Static partition with the chunk index exposed: fn(chunk, begin, end).
/// num_chunks() tells callers how many partial buffers to allocate.
int num_chunks(int64_t n, int64_t min_parallel = 4096);
void parallel_for_chunked(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn,
                          int64_t min_parallel = 4096);

}  // namespace lsanet
