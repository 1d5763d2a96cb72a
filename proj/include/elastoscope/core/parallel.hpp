#pragma once

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace elastoscope {

/// Caps the worker count used by the data-parallel loops. n == 0 falls back to
/// ELASTOSCOPE_THREADS, then to the runtime default.
inline void set_thread_count(int n) {
  if (n <= 0) {
    if (const char* env = std::getenv("ELASTOSCOPE_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (...) {
        n = 0;
      }
    }
  }
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace elastoscope
