#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace dermnet {

/// Runs fn(i) for i in [0, n). Work items must write to disjoint state; the
/// result is identical for any worker count.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += k) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace dermnet
