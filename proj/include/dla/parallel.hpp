#pragma once

#include <cstdint>
#include <functional>

namespace dla {

// Worker count: DLA_THREADS env var if set, else hardware concurrency.
int worker_count();

// Static contiguous split of [0, n) across workers. Only used where every
// output element is computed independently, so results are bit-identical to
// the sequential order for any worker count. Runs inline when the job is
// below `grain` elements.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t begin, int64_t end)>& fn);

}  // namespace dla
