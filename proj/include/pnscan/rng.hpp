#pragma once

#include <cmath>
#include <cstdint>

namespace pnscan {

/// Seeded PRNG (splitmix64 core) used everywhere randomness is needed.
/// std::random distributions are implementation-defined, so uniform and
/// gaussian draws are generated here to keep runs bit-reproducible across
/// toolchains. All consumers take an explicit seed; there is no global state.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

    /// Unbiased integer in [0, n). n must be > 0.
    uint64_t uniform_below(uint64_t n) {
        // rejection from the top to avoid modulo bias
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard Box-Muller; spare value cached.
    double gaussian(double mean = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + sigma * spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mean + sigma * mag * std::cos(2.0 * M_PI * u2);
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a stream tag.
/// Used to hand per-frame / per-trial generators their own seed without
/// coupling their sequences.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    Rng mixer(base ^ (stream * 0xD1342543DE82EF95ull + 0x2545F4914F6CDD1Dull));
    mixer.next_u64();
    return mixer.next_u64();
}

}  // namespace pnscan
