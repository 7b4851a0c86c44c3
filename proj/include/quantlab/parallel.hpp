#pragma once

#include <cstddef>
#include <functional>

namespace quantlab {

// Worker count for embarrassingly parallel loops, read from the
// QUANTLAB_THREADS environment variable. Defaults to 1; unparseable or
// nonpositive values also fall back to 1; capped at 64.
unsigned quantlab_threads();

// Runs fn(0), ..., fn(n-1) striped across quantlab_threads() workers.
// Each call must touch only its own index's data, so results are identical
// for every worker count. The first worker exception (in worker order) is
// rethrown after all workers join.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

} // namespace quantlab
