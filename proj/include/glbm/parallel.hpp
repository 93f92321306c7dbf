#pragma once

#include <functional>

namespace glbm {

void set_thread_count(int n);
int thread_count();

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are fixed by
/// n and the thread count, so writes to disjoint indices are deterministic.
/// The first exception thrown by any chunk is rethrown.
void parallel_for(int n, const std::function<void(int, int)>& body);

}  // namespace glbm
