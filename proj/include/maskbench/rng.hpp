#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace maskbench {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent per-sample streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> salt) {
    std::uint64_t s = mix_seed(seed);
    for (auto v : salt) s = mix_seed(s ^ mix_seed(v));
    return s;
}

// Uniform in [0, 1) from the top 53 bits; stable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

} // namespace maskbench
