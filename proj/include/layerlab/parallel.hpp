// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef LAYERLAB_PARALLEL_HPP_
#define LAYERLAB_PARALLEL_HPP_

#include <cstddef>
#include <functional>

namespace layerlab {

// Worker count: LL_THREADS if set to a positive integer, otherwise the
// hardware concurrency. Always at least 1.
int worker_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Row order of the
// results is up to the caller; fn must only write to slot i. The first
// exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace layerlab

#endif  // LAYERLAB_PARALLEL_HPP_
