#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace drouter {

/// Selects the OpenMP kernel or its serial reference.
enum class Execution { serial, parallel };

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs;
/// any reduction happens afterwards in index order so results do not
/// depend on the thread count. If iterations throw, the exception from the
/// lowest index is rethrown, matching the serial path.
template <class Body>
void for_each_index(std::size_t n, Execution exec, Body&& body) {
    if (exec == Execution::serial || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    bool failed = false;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) reduction(|| : failed)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
            failed = true;
        }
    }
    if (failed) {
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
}

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace drouter
