#pragma once

#include <cstddef>

namespace stpam {

// Process-wide worker count for the OpenMP kernels. 0 means "use the OpenMP
// default". Setting it to 1 forces the serial path everywhere.
void set_thread_count(int n);
int thread_count();

// Runs body(i) for i in [0, n). Iterations must be independent; results that
// depend on accumulation order must be reduced by the caller in index order.
template <typename Body>
void parallel_for(std::size_t n, Body&& body);

namespace detail {
bool parallel_enabled();
}

}  // namespace stpam

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stpam {

template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
#ifdef _OPENMP
  if (detail::parallel_enabled() && n > 1) {
    const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt > 0 ? nt : omp_get_max_threads())
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      body(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace stpam
