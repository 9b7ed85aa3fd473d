#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace debiaskit {

// Index-parallel map. Workers pull indices from a shared counter and write
// results by index, so the outcome is identical for any worker count.
inline void parallel_for(int jobs, std::size_t n,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs <= 0) jobs = int(std::thread::hardware_concurrency());
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  int count = jobs < int(n) ? jobs : int(n);
  pool.reserve(std::size_t(count));
  for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace debiaskit
