#include "nasbnn/parallel.hpp"

#include <algorithm>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nasbnn {

int compute_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& body) {
    if (n <= 0) return;
    if (n == 1 || compute_threads() == 1) {
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) body(i);
}

int64_t num_chunks(int64_t n, int64_t chunk_size) {
    return (n + chunk_size - 1) / chunk_size;
}

void parallel_chunks(int64_t n, int64_t chunk_size,
                     const std::function<void(int64_t, int64_t, int64_t)>& body) {
    const int64_t chunks = num_chunks(n, chunk_size);
    parallel_for(chunks, [&](int64_t c) {
        const int64_t begin = c * chunk_size;
        const int64_t end = std::min(n, begin + chunk_size);
        body(c, begin, end);
    });
}

}  // namespace nasbnn
