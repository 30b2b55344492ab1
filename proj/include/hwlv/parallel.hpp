#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace hwlv {

// Runs body(begin, end, worker) over [0, n) split into contiguous chunks.
// Chunk boundaries depend only on (n, threads); each index is processed
// exactly once, so results do not depend on scheduling.
template <class Body>
void parallel_for(std::size_t n, std::size_t threads, Body&& body) {
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        body(std::size_t{0}, n, std::size_t{0});
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        const std::size_t begin = n * w / threads;
        const std::size_t end = n * (w + 1) / threads;
        pool.emplace_back([&, begin, end, w] {
            try {
                body(begin, end, w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace hwlv
