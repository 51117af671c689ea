#pragma once

#include <cstdint>
#include <functional>

namespace uhd {

// Global worker count used by parallel_for. Defaults to the hardware
// concurrency; 1 disables threading entirely.
void set_num_threads(int n);
int get_num_threads();

// Runs fn(begin,end) over a static partition of [0,n). Each index lands in
// exactly one chunk and every chunk writes a disjoint output range, so
// results are identical for any worker count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace uhd
