#pragma once

#include <cstddef>
#include <functional>

namespace trace {

/// Worker count: hardware concurrency capped by TRACE_THREADS when set.
unsigned worker_count();

/// Runs body(i) for i in [0, n). Each index must write only its own output,
/// which keeps results independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace trace
