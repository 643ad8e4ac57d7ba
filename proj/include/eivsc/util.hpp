#pragma once

// Small execution helpers. Work items are indexed and side-effect-isolated;
// callers reduce results in index order so output never depends on thread
// count or scheduling.

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace eivsc::util {

inline int worker_count() {
  if (const char* env = std::getenv("EIVSC_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, count), partitioned statically across workers.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn, int workers = 0) {
  if (workers <= 0) workers = worker_count();
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t n_threads = std::min<std::size_t>(workers, count);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += n_threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace eivsc::util
