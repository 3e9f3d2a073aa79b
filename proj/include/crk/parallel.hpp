#pragma once

#include <cstddef>
#include <functional>

namespace crk {

/// Caps the number of worker threads used by library calls (>= 1).
void set_thread_count(int n);
int thread_count();

/// Runs body(i) for i in [0, n). Each index is processed exactly once; callers
/// write results into per-index slots so output never depends on scheduling.
/// Nested calls run serially on the calling worker. The first exception thrown
/// by any body is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace crk
