// SPDX-License-Identifier: Apache-2.0
//
// Platform-independent randomness. std::*_distribution output is
// implementation-defined, so fixtures and masks draw from these instead.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ramerge {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

// Uniform [0, 1) fully determined by (seed, name, index); no shared state.
double counter_uniform(std::uint64_t seed, std::string_view name, std::uint64_t index);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();                          // [0, 1)
    double normal();                           // standard normal, Box-Muller
    std::uint64_t below(std::uint64_t bound);  // [0, bound), bound > 0

private:
    std::mt19937_64 engine_;
};

}  // namespace ramerge
