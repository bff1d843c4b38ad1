#pragma once

#include <cmath>
#include <cstdint>

namespace mscred {

/// Seedable, portable random generator: xoshiro256++ seeded via splitmix64.
///
/// The generator and the draw order are part of the tool's reproducibility
/// contract; every random decision in the library flows through this class,
/// so two builds of this project given the same seed produce identical data.
///
/// Draw definitions:
///   next_u64()     one xoshiro256++ step
///   uniform01()    (next_u64() >> 11) * 2^-53, in [0, 1)
///   uniform(a, b)  a + (b - a) * uniform01()
///   uniform_int(m) unbiased integer in [0, m) by rejection sampling
///   normal()       Box-Muller, exactly two uniform draws per call:
///                  u1 = ((next_u64() >> 11) + 1) * 2^-53 in (0, 1]
///                  u2 = (next_u64() >> 11) * 2^-53      in [0, 1)
///                  returns sqrt(-2 ln u1) * cos(2 pi u2)
///   fork(k)        independent stream k derived from the original seed
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    std::uint64_t uniform_int(std::uint64_t m) {
        const std::uint64_t threshold = (0 - m) % m;
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x >= threshold) return x % m;
        }
    }

    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Stream derived from the original seed, independent of draws made so far.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
        return Rng(splitmix64(x));
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_ = 0;
    std::uint64_t state_[4] = {};
};

}  // namespace mscred
