#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hiervid {

/// Runs fn(i) for i in [0, n) on up to `threads` workers, interleaved by
/// index. Callers write results into per-index slots, so output never depends
/// on the worker count. The first exception thrown is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += threads) fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            });
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace hiervid
