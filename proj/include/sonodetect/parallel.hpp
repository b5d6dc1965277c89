#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace sono {

// Runs fn(i) for i in [0,n). Each index writes only its own output slot, so
// results are identical for any thread count; aggregation stays in index order.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw < 2 || n < 32) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = std::min<std::size_t>(hw, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace sono
