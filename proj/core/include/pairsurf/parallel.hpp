#pragma once

#include <cstddef>
#include <functional>

namespace pairsurf {

// Worker count to use for a requested value; <= 0 means all hardware threads.
int resolve_threads(int requested);

// Calls fn(index, worker) for every index in [0, count) on up to `threads`
// workers. Indices are handed out dynamically; `worker` is in [0, threads)
// and lets callers keep per-worker scratch state. The exception of the lowest
// failing index is rethrown after all workers finish.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t, int)>& fn);

}  // namespace pairsurf
