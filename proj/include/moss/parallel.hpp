#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace moss {

/// Runs fn(i) for i in [0, n) on up to max_threads workers. Results land in
/// index order; the first captured exception is rethrown after the join, so
/// parallel runs fail the same way serial ones do.
inline void parallel_for(size_t n, int max_threads, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    const size_t workers = std::min<size_t>(std::max(1, max_threads), n);
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
            for (size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace moss
