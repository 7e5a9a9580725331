#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace cdul::rng {

// Deterministic draws built directly on mt19937_64 output so results do not
// depend on the standard library's distribution implementations.

inline std::uint64_t below(std::mt19937_64& gen, std::uint64_t n) { return gen() % n; }

inline double uniform_open(std::mt19937_64& gen) {
    return (static_cast<double>(gen() >> 11) + 0.5) * 0x1p-53;
}

// Box-Muller pairs.
template <class Float>
void fill_gaussian(std::mt19937_64& gen, std::span<Float> out) {
    size_t i = 0;
    while (i < out.size()) {
        double u1 = uniform_open(gen);
        double u2 = uniform_open(gen);
        double r = std::sqrt(-2.0 * std::log(u1));
        out[i++] = static_cast<Float>(r * std::cos(2.0 * M_PI * u2));
        if (i < out.size()) out[i++] = static_cast<Float>(r * std::sin(2.0 * M_PI * u2));
    }
}

template <class T>
void shuffle(std::mt19937_64& gen, std::span<T> values) {
    for (size_t i = values.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(below(gen, i));
        std::swap(values[i - 1], values[j]);
    }
}

} // namespace cdul::rng
