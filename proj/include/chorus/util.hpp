#pragma once

#include <functional>

namespace chorus {

// Thread count: CHORUS_THREADS env var, else hardware concurrency (capped).
int default_threads();

// Runs fn(i) for i in [0, n) across up to n_threads workers. Work items must
// write to disjoint state; results stay deterministic because any reduction
// happens afterwards in index order.
void parallel_for(int n, int n_threads, const std::function<void(int)> & fn);

} // namespace chorus
