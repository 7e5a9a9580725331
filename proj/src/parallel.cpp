#include "cdul/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cdul::par {

namespace {
std::atomic<ExecMode> g_mode{mode_from_env()};
}

ExecMode mode_from_env() noexcept {
    const char* v = std::getenv("CDUL_EXEC");
    if (v != nullptr && std::strcmp(v, "serial") == 0) return ExecMode::serial;
    return ExecMode::openmp;
}

ExecMode mode() noexcept { return g_mode.load(std::memory_order_relaxed); }

void set_mode(ExecMode m) noexcept { g_mode.store(m, std::memory_order_relaxed); }

int max_threads() noexcept {
#ifdef _OPENMP
    return mode() == ExecMode::openmp ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

} // namespace cdul::par
