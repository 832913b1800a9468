#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace cmclab {

/// Worker count: CMC_THREADS if set (>= 1), else hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("CMC_THREADS")) {
    const long v = std::atol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? hc : 1;
}

/// Runs body(i) for i in [0, n). Bodies must write only to slot i of any
/// shared output; reductions over slots happen serially afterwards, so the
/// result is independent of the worker count.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t workers = std::min(worker_count(), n == 0 ? 1 : n);
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

}  // namespace cmclab
