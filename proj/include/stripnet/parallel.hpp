#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace stripnet {

namespace detail {
inline std::atomic<int>& thread_count_slot() {
  static std::atomic<int> count{0};  // 0 = unresolved
  return count;
}
}  // namespace detail

// Worker count: explicit set_thread_count() wins, then STRIPDET_THREADS, then 1.
inline int thread_count() {
  int v = detail::thread_count_slot().load(std::memory_order_relaxed);
  if (v > 0) return v;
  if (const char* env = std::getenv("STRIPDET_THREADS")) {
    int parsed = 0;
    try {
      parsed = std::stoi(env);
    } catch (...) {
      parsed = 0;
    }
    if (parsed > 0) {
      detail::thread_count_slot().store(parsed, std::memory_order_relaxed);
      return parsed;
    }
  }
  detail::thread_count_slot().store(1, std::memory_order_relaxed);
  return 1;
}

inline void set_thread_count(int n) {
  detail::thread_count_slot().store(n > 0 ? n : 1, std::memory_order_relaxed);
}

// Runs f(i) for i in [0, n). Each index is executed exactly once by one worker,
// so results are bit-identical for any thread count as long as f writes only
// to locations owned by index i.
template <class F>
void parallel_for(std::int64_t n, F&& f) {
  const int workers = thread_count();
  if (workers <= 1 || n < 2) {
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
  const int use = static_cast<int>(std::min<std::int64_t>(workers, n));
  std::atomic<std::int64_t> next{0};
  auto run = [&] {
    for (;;) {
      std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      f(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(use) - 1);
  for (int t = 1; t < use; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
}

}  // namespace stripnet
