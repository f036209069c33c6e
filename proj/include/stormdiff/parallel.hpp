#pragma once

#include <cstddef>
#include <functional>

namespace stormdiff {

/// Worker count: SD_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks, one per
/// worker. Callers must make each index independent so results never depend
/// on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace stormdiff
