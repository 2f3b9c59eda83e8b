#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace relprop {

/// Runs fn(0..n-1) over `jobs` workers pulling from a shared index. fn must
/// handle its own failures; an exception escaping fn terminates the process,
/// so wrap per-item work in try/catch and record the outcome per slot.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const std::size_t workers = jobs < n ? jobs : n;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
}

} // namespace relprop
