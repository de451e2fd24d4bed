#include "hemoflow/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace hemoflow {

namespace {

int resolve_default_threads() {
  if (const char* env = std::getenv("HEMOFLOW_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

int g_threads = resolve_default_threads();

}  // namespace

int thread_count() { return g_threads; }

void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }

void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t,
                                              std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t chunks = chunk_count(n);
  const int workers = g_threads;
  if (workers <= 1 || chunks == 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t lo = c * kParallelChunk;
      const std::size_t hi = lo + kParallelChunk < n ? lo + kParallelChunk : n;
      body(c, lo, hi);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= chunks) return;
      const std::size_t lo = c * kParallelChunk;
      const std::size_t hi = lo + kParallelChunk < n ? lo + kParallelChunk : n;
      body(c, lo, hi);
    }
  };

  std::vector<std::thread> pool;
  const std::size_t spawned =
      static_cast<std::size_t>(workers) < chunks
          ? static_cast<std::size_t>(workers)
          : chunks;
  pool.reserve(spawned - 1);
  for (std::size_t t = 1; t < spawned; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
}

}  // namespace hemoflow
