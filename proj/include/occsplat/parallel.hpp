#pragma once

#include <functional>

namespace occsplat {

/// Worker count from OCCSPLAT_THREADS (default 1, clamped to [1, 64]).
int thread_count();

/// Runs fn(i) for i in [0, n), interleaving indices across workers. Callers
/// keep results deterministic by writing to disjoint slots. The first
/// exception thrown by any worker is rethrown after all workers join.
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace occsplat
