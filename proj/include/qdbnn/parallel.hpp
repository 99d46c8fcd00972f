#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace qdbnn {

inline int resolve_thread_count(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end, chunk_index) over [0, count) split into fixed-size
// chunks.  Chunk boundaries depend only on `count` and `chunk_size`, never on
// the number of workers, so callers that reduce per-chunk results in chunk
// order get bit-identical sums for any thread count.
inline void parallel_chunks(std::size_t count, std::size_t chunk_size, int n_threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (count == 0) return;
    const std::size_t n_chunks = (count + chunk_size - 1) / chunk_size;
    n_threads = resolve_thread_count(n_threads);
    if (n_threads == 1 || n_chunks == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t b = c * chunk_size;
            fn(b, std::min(count, b + chunk_size), c);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            const std::size_t b = c * chunk_size;
            fn(b, std::min(count, b + chunk_size), c);
        }
    };
    std::vector<std::thread> pool;
    const int spawn = std::min<std::size_t>(n_threads, n_chunks) - 1;
    pool.reserve(spawn);
    for (int i = 0; i < spawn; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

constexpr std::size_t kGradChunk = 16;  // samples per deterministic reduction bin

}  // namespace qdbnn
