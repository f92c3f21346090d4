#pragma once

#include <cstdint>
#include <functional>

namespace dyadit {

// Worker count for parallel_for. Resolved once from DYADIT_THREADS (clamped to
// hardware concurrency); defaults to hardware concurrency.
int worker_count();

// Runs fn(i) for i in [begin, end) on the shared pool. Each index is processed by
// exactly one worker with no cross-index reductions, so results do not depend on
// the thread count. Falls back to inline execution for small ranges.
void parallel_for(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn,
                  std::int64_t grain = 1);

}  // namespace dyadit
