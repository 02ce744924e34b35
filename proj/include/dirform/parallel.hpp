#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "dirform/stats.hpp"

namespace dirform {

/// threads <= 0 selects the hardware thread count.
inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs body(i) for i in [0, count). Callers must write results into
/// per-index slots; combined with ordered reduction this makes every
/// aggregate bit-identical for any thread count.
template <class Fn>
inline void parallel_for(std::int64_t count, int threads, Fn&& body) {
  if (count <= 0) return;
  threads = resolve_threads(threads);
  if (threads > count) threads = static_cast<int>(count);
  if (threads == 1) {
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::int64_t chunk = count / (static_cast<std::int64_t>(threads) * 8);
  if (chunk < 1) chunk = 1;
  std::atomic<std::int64_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::int64_t lo = next.fetch_add(chunk, std::memory_order_relaxed);
      if (lo >= count) return;
      const std::int64_t hi = std::min(lo + chunk, count);
      try {
        for (std::int64_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

/// Ordered compensated reduction of per-index samples.
inline double ordered_sum(const std::vector<double>& values) {
  running_sum s;
  for (double v : values) s.add(v);
  return s.value();
}

}  // namespace dirform
