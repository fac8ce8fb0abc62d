#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace drfuse {

// Counter-based deterministic generator. Each draw hashes (key, counter)
// with two SplitMix64 finalizer rounds, so streams can be split without
// sharing state and a fixed seed gives a bit-identical sequence on every
// platform and thread schedule.
struct Rng {
    std::uint64_t key = 0;
    std::uint64_t ctr = 0;

    Rng() = default;
    explicit Rng(std::uint64_t seed) : key(mix(mix(seed ^ 0x9E3779B97F4A7C15ull))), ctr(0) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        std::uint64_t v = mix(key + 0x9E3779B97F4A7C15ull * (ctr + 1));
        v = mix(v ^ key);
        ++ctr;
        return v;
    }

    // Derives an independent stream; the parent is left untouched.
    Rng split(std::uint64_t stream) const {
        Rng r;
        r.key = mix(key ^ mix(stream + 0xD1B54A32D192ED03ull));
        r.ctr = 0;
        return r;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, fixed two-uniform consumption per draw.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        return next_u64() % n;
    }
};

}  // namespace drfuse
