#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace midas {

/// Number of worker threads the kernels may use. Reads MIDAS_THREADS; falls
/// back to the hardware concurrency when unset or unparsable.
inline std::size_t thread_budget() {
    if (const char* env = std::getenv("MIDAS_THREADS"); env != nullptr) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n). Each index is processed by exactly one
/// thread, so results written per index do not depend on the thread count.
/// Reductions must be done by the caller over per-index partials.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_per_thread = 4) {
    const std::size_t workers =
        std::min(thread_budget(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_per_thread)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace midas
