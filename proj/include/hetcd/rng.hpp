#pragma once
// Deterministic random number generation shared by every seeded stage.
// Standard-library distributions are implementation-defined, so sampling is
// done by hand on top of a splitmix64 stream; equal seeds give equal draws
// on every platform.

#include <bit>
#include <cmath>
#include <cstdint>

namespace hetcd {

inline constexpr std::uint64_t kSeedGolden = 0x9e3779b97f4a7c15ull;

inline std::uint64_t mix64(std::uint64_t z) {
    z += kSeedGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Order-sensitive seed combinator: mix_seed(a, b) != mix_seed(b, a).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ std::rotl(mix64(b), 17));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += kSeedGolden;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n). n must be nonzero.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t bound = ~0ull - ~0ull % n;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= bound);
        return r % n;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent child stream, e.g. one per ensemble member or repetition.
    Rng fork(std::uint64_t stream) const { return Rng(mix_seed(state_, stream)); }

private:
    std::uint64_t state_;
};

}  // namespace hetcd
