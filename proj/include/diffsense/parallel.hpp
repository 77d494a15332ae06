#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace diffsense {

inline unsigned default_workers() {
  const unsigned h = std::thread::hardware_concurrency();
  return h ? h : 1u;
}

// Runs fn(i) for i in [0, n) on `workers` threads. Each index writes only to
// its own slot in caller-owned storage, so output content is independent of
// the schedule. The first exception thrown by any fn is rethrown here.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& fn) {
  if (n == 0) return;
  if (workers == 0) workers = default_workers();
  if (workers > n) workers = static_cast<unsigned>(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mtx;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mtx);
        if (!error) error = std::current_exception();
        next.store(n, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace diffsense
