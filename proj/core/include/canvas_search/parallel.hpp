#pragma once

#include <cstddef>
#include <functional>

namespace canvas_search {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency; 0 restores the default.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs body(begin, end) over [0, n) split into fixed chunks of `grain`.
/// Chunk boundaries never depend on the thread count, so any work whose
/// results are written per index is reproducible regardless of parallelism.
/// The first exception thrown by a chunk is rethrown on the caller.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

} // namespace canvas_search
