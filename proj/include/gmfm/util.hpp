#ifndef GMFM_UTIL_HPP
#define GMFM_UTIL_HPP

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace gmfm {

// Runs body(i) for i in [0, n). Each task must be self-contained and write
// only to its own slot; with jobs == 1 execution is strictly sequential, so
// results are bit-deterministic.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    };
    std::vector<std::thread> pool;
    int count = std::min(jobs, n);
    pool.reserve(static_cast<size_t>(count));
    for (int w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

inline int default_jobs() {
    if (const char* env = std::getenv("GMFM_JOBS")) {
        int j = std::atoi(env);
        if (j >= 1) return j;
    }
    return 1;
}

}  // namespace gmfm

#endif
