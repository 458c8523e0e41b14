#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace emocross {

inline unsigned worker_count() {
  static const unsigned n = [] {
    if (const char* env = std::getenv("EMOCROSS_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
  }();
  return n;
}

// Runs body(begin, end) over disjoint contiguous chunks of [0, n).
// Every index is handled by exactly one invocation and chunks never share
// output elements, so results are bitwise independent of the worker count.
template <typename Body>
void parallel_for(std::size_t n, std::size_t grain, const Body& body) {
  if (n == 0) return;
  const unsigned workers = worker_count();
  if (workers <= 1 || n <= grain) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks =
      std::min<std::size_t>(workers, std::max<std::size_t>(1, n / grain));
  const std::size_t step = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t lo = c * step;
    const std::size_t hi = std::min(n, lo + step);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(std::size_t{0}, std::min(n, step));
  for (auto& t : pool) t.join();
}

}  // namespace emocross
