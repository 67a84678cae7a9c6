#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace fbsde {

// Runs fn(block_index, begin, end) over [0,n) split into fixed-size blocks.
// Block boundaries depend only on n, never on the thread count, so any
// per-block partial results can be reduced in block order to give results
// that are bit-identical for every value of `threads`.
inline void parallel_for_blocks(std::size_t n, int threads, std::size_t block_size,
                                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  if (block_size == 0) block_size = 1;
  const std::size_t n_blocks = (n + block_size - 1) / block_size;
  if (threads <= 1 || n_blocks == 1) {
    for (std::size_t b = 0; b < n_blocks; ++b)
      fn(b, b * block_size, std::min(n, (b + 1) * block_size));
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      fn(b, b * block_size, std::min(n, (b + 1) * block_size));
    }
  };
  const int t = std::min<std::size_t>(threads, n_blocks);
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (int i = 0; i < t; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

// Block-deterministic sum reduction: per-block partials, reduced in order.
inline double parallel_sum_blocks(std::size_t n, int threads, std::size_t block_size,
                                  const std::function<double(std::size_t, std::size_t)>& partial) {
  if (n == 0) return 0.0;
  if (block_size == 0) block_size = 1;
  const std::size_t n_blocks = (n + block_size - 1) / block_size;
  std::vector<double> partials(n_blocks, 0.0);
  parallel_for_blocks(n, threads, block_size,
                      [&](std::size_t b, std::size_t lo, std::size_t hi) { partials[b] = partial(lo, hi); });
  double total = 0.0;
  for (double p : partials) total += p;
  return total;
}

}  // namespace fbsde
