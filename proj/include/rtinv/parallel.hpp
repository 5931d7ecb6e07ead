#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rtinv {

/// Number of worker threads to use when `requested` is 0.
inline int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, n) on up to `threads` threads (0 = hardware).
/// Work items must write to disjoint outputs. The first exception thrown by any
/// item is rethrown after all workers stop; the failing index is reported
/// through `failed_index` when non-null.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn, int* failed_index = nullptr) {
  if (n <= 0) return;
  const int workers = std::clamp(threads <= 0 ? default_threads() : threads, 1, n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        if (failed_index) *failed_index = i;
        throw;
      }
    }
    return;
  }

  std::atomic<int> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  int error_index = n;
  std::mutex mutex;

  auto work = [&] {
    while (!stop.load()) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        // Keep the lowest failing index so the report is deterministic.
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        stop.store(true);
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (error) {
    if (failed_index) *failed_index = error_index;
    std::rethrow_exception(error);
  }
}

}  // namespace rtinv
