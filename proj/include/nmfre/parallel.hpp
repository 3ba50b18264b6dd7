#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace nmfre {

// Runs fn(0..count-1) across up to `threads` workers. Tasks must be
// independent; callers that need deterministic aggregation should write into
// per-index slots and reduce sequentially afterwards.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (count <= 0) return;
    threads = std::min(std::max(threads, 1), count);
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            int i;
            while ((i = next.fetch_add(1)) < count) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline int default_thread_count() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace nmfre
