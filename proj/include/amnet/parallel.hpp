#pragma once

#include <cstdint>
#include <functional>

namespace amnet {

/// Worker budget for data-parallel kernels. Kernels split work so that every
/// output element is produced by exactly one worker with a fixed reduction
/// order, which keeps results independent of the budget.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [0, count), spread over up to num_threads() workers.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn);

}  // namespace amnet
