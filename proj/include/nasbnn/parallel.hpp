#pragma once

#include <cstdint>
#include <functional>

namespace nasbnn {

int compute_threads();

// Runs body(i) for i in [0, n). Iterations must write disjoint outputs;
// scheduling is static so results do not depend on timing.
void parallel_for(int64_t n, const std::function<void(int64_t)>& body);

// Runs body(chunk_index, begin, end) over fixed-size chunks of [0, n).
// Chunk boundaries depend only on n and chunk_size, so per-chunk partial
// results can be reduced in chunk order for thread-count-independent sums.
void parallel_chunks(int64_t n, int64_t chunk_size,
                     const std::function<void(int64_t, int64_t, int64_t)>& body);

int64_t num_chunks(int64_t n, int64_t chunk_size);

}  // namespace nasbnn
