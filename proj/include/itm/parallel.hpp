#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace itm {

// Worker count: `requested` if non-zero, else $ITM_THREADS, else hardware
// concurrency (at least 1).
std::size_t resolve_threads(std::size_t requested = 0);

// Calls body(worker, index) for every index in [0, n). Indices are handed out
// dynamically; callers must write results to index-owned slots so the output
// does not depend on the schedule.
template <typename Body>
void parallel_for(std::size_t n, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(std::size_t{0}, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        body(w, i);
      }
    });
  }
}

}  // namespace itm
