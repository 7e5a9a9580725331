#pragma once

#include <cstdint>
#include <exception>

namespace cdul::par {

// Every data-parallel kernel in this codebase runs through for_each_index.
// The loop body is shared between the serial and the OpenMP variant, and
// each index is written by exactly one invocation, so both modes produce
// bitwise-identical results. Tests pin that equivalence; the bench tool
// compares timings.
enum class ExecMode { serial, openmp };

ExecMode mode() noexcept;
void set_mode(ExecMode m) noexcept;
int max_threads() noexcept;

// Reads CDUL_EXEC (serial|openmp) once; openmp when unset.
ExecMode mode_from_env() noexcept;

template <class Fn>
void for_each_index(std::int64_t n, Fn&& fn) {
    if (n <= 0) return;
    if (mode() == ExecMode::openmp) {
        // exceptions may not unwind out of an OpenMP region
        std::exception_ptr first_error;
#pragma omp parallel for schedule(static) shared(first_error)
        for (std::int64_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
#pragma omp critical(cdul_for_each_index_error)
                if (!first_error) first_error = std::current_exception();
            }
        }
        if (first_error) std::rethrow_exception(first_error);
    } else {
        for (std::int64_t i = 0; i < n; ++i) {
            fn(i);
        }
    }
}

struct ScopedMode {
    explicit ScopedMode(ExecMode m) : saved_(mode()) { set_mode(m); }
    ~ScopedMode() { set_mode(saved_); }
    ScopedMode(const ScopedMode&) = delete;
    ScopedMode& operator=(const ScopedMode&) = delete;

private:
    ExecMode saved_;
};

} // namespace cdul::par
