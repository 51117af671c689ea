#include "uhdformer/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace uhd {

namespace {
int g_threads = []() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}();
}

void set_num_threads(int n) { g_threads = std::max(1, n); }

int get_num_threads() { return g_threads; }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int workers = static_cast<int>(std::min<int64_t>(g_threads, n));
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        int64_t b = t * chunk;
        int64_t e = std::min<int64_t>(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e]() { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace uhd
