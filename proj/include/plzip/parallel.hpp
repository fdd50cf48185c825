#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace plzip {

//! Thread count resolution: explicit value > 0 wins, else the
//! PLZIP_THREADS environment variable, else hardware concurrency.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PLZIP_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

//! Runs fn(i) for i in [0, n). Work items write to index-addressed slots,
//! so results are independent of scheduling and thread count. The first
//! exception wins and is rethrown after all workers join.
inline void parallel_for(long n, const std::function<void(long)>& fn,
                         int threads = 0) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next(0);
  std::atomic<bool> failed(false);
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      long i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int spawn = static_cast<int>(std::min<long>(threads, n));
  pool.reserve(spawn);
  for (int k = 0; k < spawn; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace plzip
