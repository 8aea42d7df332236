#pragma once

#include <cstddef>
#include <functional>

namespace ltla {

/// Process-wide cap on worker threads (the CLI's --threads). 1 means
/// everything runs inline on the caller, which is the deterministic mode.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs fn(begin, end, worker) over contiguous chunks of [0, n). Chunk
/// boundaries depend only on n and the thread cap, so callers that reduce
/// per-worker partials in worker order get reproducible results.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t begin, std::size_t end, std::size_t worker)>& fn);

/// Number of chunks parallel_for will use for n items.
std::size_t parallel_chunks(std::size_t n);

}  // namespace ltla
