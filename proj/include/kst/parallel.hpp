#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace kst {

// Runs fn(i) for i in [0, count) on up to `workers` threads. Callers keep
// results deterministic by writing into slot i only; the first captured
// exception is rethrown after all threads join.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), count);
    if (w <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::exception_ptr> errors(w);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i; !failed && (i = next++) < count;) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
                failed = true;
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace kst
