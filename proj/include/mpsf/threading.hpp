#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace mpsf {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static contiguous partition of [0, n) over `threads` workers. Each worker
// sees its own index so callers can keep per-worker accumulators and combine
// them in worker order; results are then reproducible for a fixed thread
// count.
inline void parallel_for(size_t n, int threads,
                         const std::function<void(size_t begin, size_t end, int worker)>& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    fn(0, n, 0);
    return;
  }
  size_t workers = std::min<size_t>(threads, n);
  size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    size_t b = w * chunk;
    size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, w] { fn(b, e, static_cast<int>(w)); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mpsf
