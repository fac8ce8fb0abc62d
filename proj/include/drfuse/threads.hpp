#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace drfuse {

// Worker cap: DRFUSE_THREADS env var, else hardware concurrency, clamped to
// [1, 16]. Parsed once per process.
inline int thread_cap() {
    static const int cap = [] {
        int n = 0;
        if (const char* env = std::getenv("DRFUSE_THREADS")) n = std::atoi(env);
        if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        return n > 16 ? 16 : n;
    }();
    return cap;
}

// Runs fn(0..n-1) with at most thread_cap() workers. Each index is processed
// by exactly one worker and writes only its own outputs, so results are
// identical to the sequential order regardless of scheduling.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int workers = std::min(n, thread_cap());
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace drfuse
