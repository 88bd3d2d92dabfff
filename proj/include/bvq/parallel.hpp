#pragma once

#include <cstddef>
#include <functional>

namespace bvq {

/// Runs fn(begin, end) over contiguous chunks of [begin, end), possibly on
/// worker threads. Chunk boundaries depend only on the range and the worker
/// count cap, and every index is processed by exactly one invocation, so
/// results are bit-identical to the sequential order as long as fn writes
/// disjoint outputs per index.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn);

/// Worker count used by parallel_for (>= 1).
std::size_t worker_count();

}  // namespace bvq
