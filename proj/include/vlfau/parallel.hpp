#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace vlfau {

/// Calls fn(worker, begin, end) on `workers` contiguous chunks of [0, n).
/// Chunk boundaries depend only on n and workers. The first exception is rethrown.
template <typename F>
void parallel_chunks(std::size_t n, int workers, F&& fn) {
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  if (w == 1) {
    fn(0, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t begin = n * k / w, end = n * (k + 1) / w;
    threads.emplace_back([&, k, begin, end] {
      try {
        fn(static_cast<int>(k), begin, end);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// fn(i) for every i in [0, n); results must go to per-index slots.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  parallel_chunks(n, workers, [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace vlfau
