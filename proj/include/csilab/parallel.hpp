// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace csilab {

/// 0 means: CSILAB_THREADS if set, else the hardware concurrency.
std::size_t resolve_threads(std::size_t requested);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must
/// write to disjoint outputs. If any item throws, the exception of the
/// lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace csilab
