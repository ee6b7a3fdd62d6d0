#pragma once

#include <cstdint>
#include <functional>

namespace spinet {

// Worker cap for internal loops. Defaults to SPINET_THREADS when set, else 1.
int thread_limit();
void set_thread_limit(int threads);

// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs; callers
// reduce partial results in index order so results do not depend on the
// number of workers.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

// Keeps freed heap blocks in the process instead of returning them to the OS.
// A training step frees and reallocates the same large buffers, which
// otherwise page-faults on every step. glibc only; a no-op elsewhere.
void retain_heap_memory();

// Treats subnormal floats as zero on the calling thread while alive, and on
// parallel_for workers it starts. Training drives many gradients and Adam
// moments into the subnormal range, where x86 arithmetic is many times
// slower. A no-op on other architectures.
class FlushDenormals {
 public:
  FlushDenormals();
  ~FlushDenormals();
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace spinet
