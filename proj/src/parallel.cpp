#include "ovsal/parallel.hpp"

#include <cstdlib>

namespace ovsal {

namespace {
int g_threads = 0;  // 0 = not set explicitly
}

int thread_count() {
  if (g_threads > 0) return g_threads;
  if (const char* env = std::getenv("OVSAL_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) { g_threads = n > 0 ? n : 0; }

}  // namespace ovsal
