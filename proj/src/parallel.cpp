#include "bvq/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace bvq {

std::size_t worker_count() {
  static const std::size_t n = [] {
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<std::size_t>(std::clamp(hw, 1u, 8u));
  }();
  return n;
}

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (begin >= end) return;
  const std::size_t span = end - begin;
  const std::size_t workers = std::min(worker_count(), span);
  if (workers <= 1) {
    fn(begin, end);
    return;
  }
  const std::size_t chunk = (span + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  std::size_t lo = begin + chunk;
  for (std::size_t w = 1; w < workers && lo < end; ++w, lo += chunk) {
    threads.emplace_back(fn, lo, std::min(lo + chunk, end));
  }
  fn(begin, std::min(begin + chunk, end));
  for (auto& t : threads) t.join();
}

}  // namespace bvq
