#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cdml {

using Rng = std::mt19937_64;

/// Named randomness streams. Each consumer draws from its own stream so that,
/// e.g., adding a learner never shifts the fold assignment of a replication.
enum class Stream : std::uint64_t {
    data = 0x11,
    folds = 0x22,
    learners = 0x33,
    subsample = 0x44,
    tuning = 0x55,
    study = 0x66,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based seed derivation: seed -> (path[0], path[1], ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(base);
    for (auto p : path) {
        h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t h = derive_seed(base, {static_cast<std::uint64_t>(stream)});
    return path.size() == 0 ? h : derive_seed(h, path);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

} // namespace cdml
