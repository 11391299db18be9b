#pragma once

#include <cstddef>
#include <functional>

namespace meshgnn {

/// Resolves a worker count: `requested` > 0 wins, otherwise the
/// MESHGNN_THREADS environment variable, otherwise the hardware count.
int resolve_threads(int requested);

/// Runs fn(i) for i in [0, n) across up to `threads` workers with a static
/// partition. Items must be independent; results are identical for any
/// worker count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace meshgnn
