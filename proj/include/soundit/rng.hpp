// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace soundit {

// Deterministic random stream. All stochastic code in the project draws from
// one of these; the engine state round-trips through checkpoints as text so a
// resumed run continues bit-for-bit.
//
// normal() uses Box-Muller without caching the second variate: the only state
// is the mt19937_64 engine itself.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed = 0) : engine_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal draw.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(engine_() % span);
    }

    // Fork a child stream: consumes one draw from this stream.
    RandomStream fork() { return RandomStream(engine_()); }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace soundit
