#pragma once

#include <cstddef>
#include <functional>

namespace hemoflow {

// Number of worker threads. Reads HEMOFLOW_THREADS once; defaults to the
// hardware concurrency. Can be overridden programmatically (tests use this
// to prove thread-count invariance).
int thread_count();
void set_thread_count(int n);

inline constexpr std::size_t kParallelChunk = 32;

// Runs body(chunk_index, begin, end) over [0, n) in fixed-size chunks of
// kParallelChunk items. Chunk boundaries never depend on the thread count,
// so per-chunk results reduced in chunk order are bit-reproducible under
// any parallelism degree. Bodies for distinct chunks must not share
// mutable state.
void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t,
                                              std::size_t)>& body);

inline std::size_t chunk_count(std::size_t n) {
  return (n + kParallelChunk - 1) / kParallelChunk;
}

}  // namespace hemoflow
