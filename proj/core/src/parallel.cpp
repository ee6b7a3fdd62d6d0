#include "spinet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace spinet {

namespace {

int initial_limit() {
  if (const char* env = std::getenv("SPINET_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

std::atomic<int>& limit_ref() {
  static std::atomic<int> limit{initial_limit()};
  return limit;
}

}  // namespace

int thread_limit() { return limit_ref().load(); }

void set_thread_limit(int threads) { limit_ref().store(std::max(1, threads)); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const auto workers = static_cast<std::int64_t>(std::min<std::int64_t>(thread_limit(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#if defined(__SSE__)
  const unsigned csr = _mm_getcsr();
#endif
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::int64_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::int64_t w = 1; w < workers; ++w) {
    pool.emplace_back([&] {
#if defined(__SSE__)
      _mm_setcsr(csr);
#endif
      run();
    });
  }
  run();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

#if defined(__SSE__)
// MXCSR bit 15 flushes subnormal results to zero; bit 6 treats subnormal
// inputs as zero.
FlushDenormals::FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
FlushDenormals::~FlushDenormals() { _mm_setcsr(saved_); }
#else
FlushDenormals::FlushDenormals() = default;
FlushDenormals::~FlushDenormals() = default;
#endif

}  // namespace spinet
