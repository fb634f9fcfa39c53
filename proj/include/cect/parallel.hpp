#pragma once

#include <cstdint>
#include <functional>

namespace cect {

/// Worker count: CECT_FORGE_THREADS if set, otherwise hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous static ranges,
/// one per worker; every element is computed wholly inside one range with a
/// fixed iteration order, so results are bitwise identical for any worker
/// count. Caller guarantees tasks write disjoint outputs.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& range_fn);

} // namespace cect
