#pragma once
// Thread-count policy and the OpenMP loop helper used by the parallel kernel
// variants. Work is always split so that each output element is written by
// exactly one iteration, which keeps results bitwise identical for any thread
// count (including 1).

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ovsal {

// Resolution order: explicit set_thread_count() > OVSAL_THREADS env var >
// OpenMP default > 1.
int thread_count();
void set_thread_count(int n);

enum class Exec { serial, parallel };

template <class F>
void parallel_for(std::int64_t n, F&& f, Exec exec = Exec::parallel) {
#ifdef _OPENMP
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static) num_threads(ovsal::thread_count())
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#else
  (void)exec;
#endif
  for (std::int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace ovsal
