#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace veritrace {

/// Calls fn(i) for every i in [0, n) on at most `concurrency` threads.
/// Callers write results into slot i, which keeps output order stable.
/// The first exception thrown by any call is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, std::size_t concurrency, Fn&& fn) {
  if (n == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(concurrency, 1, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace veritrace
