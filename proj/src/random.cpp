// SPDX-License-Identifier: Apache-2.0

#include "ramerge/random.hpp"

#include <cmath>
#include <numbers>

namespace ramerge {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

double counter_uniform(std::uint64_t seed, std::string_view name, std::uint64_t index) {
    const std::uint64_t key = splitmix64(splitmix64(seed) ^ fnv1a64(name));
    const std::uint64_t bits = splitmix64(key ^ splitmix64(index));
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~0ull - (~0ull % bound);
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % bound;
}

}  // namespace ramerge
