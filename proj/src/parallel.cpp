#include "stpam/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace stpam {

namespace {
std::atomic<int> g_threads{0};

int env_threads() {
  if (const char* s = std::getenv("STPAM_THREADS")) {
    const int v = std::atoi(s);
    if (v > 0) return v;
  }
  return 0;
}
}  // namespace

void set_thread_count(int n) { g_threads.store(n < 0 ? 0 : n); }

int thread_count() {
  const int v = g_threads.load();
  if (v > 0) return v;
  return env_threads();
}

namespace detail {
bool parallel_enabled() { return thread_count() != 1; }
}  // namespace detail

}  // namespace stpam
