#pragma once

#include <cstddef>
#include <functional>

namespace patchnet {

// Process-wide worker count for per-sample kernels. 1 (the default) runs
// everything inline. Kernels only split over independent outputs and reduce
// partial results in a fixed order, so buffers are bitwise identical for any
// thread count.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Calls fn(i) for i in [0, n), possibly on several threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace patchnet
