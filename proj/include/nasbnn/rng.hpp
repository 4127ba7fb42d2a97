#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace nasbnn {

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream from (seed, stream_id); used to keep data
// shuffling, architecture sampling, and init draws decoupled.
inline Rng make_rng(uint64_t seed, uint64_t stream_id = 0) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
    uint64_t x = splitmix64(s);
    return Rng(x);
}

inline std::string rng_state_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void rng_state_from_string(Rng& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
}

}  // namespace nasbnn
