#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace secap {

// Worker cap from SECAP_THREADS; defaults to 1.
inline std::size_t thread_count() {
  static const std::size_t n = [] {
    const char* env = std::getenv("SECAP_THREADS");
    if (env == nullptr) return std::size_t{1};
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<std::size_t>(v) : std::size_t{1};
  }();
  return n;
}

// Runs fn(begin, end) over contiguous partitions of [0, n). Each index is
// handled by exactly one worker, so per-index arithmetic does not depend on
// the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t work_per_item, Fn&& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1 || n * work_per_item < (std::size_t{1} << 16)) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace secap
