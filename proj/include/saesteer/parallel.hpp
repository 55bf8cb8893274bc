#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace saesteer {

// Runs fn(i) for i in [0, n). jobs <= 1 runs inline; otherwise the range is
// split into contiguous chunks, one thread each. fn must write only to
// per-index slots so results are independent of scheduling. The first
// exception thrown by any worker is rethrown after all threads join.
inline void parallel_for(long long n, int jobs, const std::function<void(long long)>& fn) {
    if (n <= 0) return;
    if (jobs <= 1 || n == 1) {
        for (long long i = 0; i < n; ++i) fn(i);
        return;
    }

    const int workers = static_cast<int>(std::min<long long>(jobs, n));
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const long long chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const long long begin = static_cast<long long>(w) * chunk;
        const long long end = std::min(n, begin + chunk);
        threads.emplace_back([&, w, begin, end] {
            try {
                for (long long i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace saesteer
