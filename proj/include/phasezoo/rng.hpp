#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace phasezoo {

// splitmix64 step, used to derive independent substreams from a base seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard, but the
// std distributions are not, so the transforms below are hand-rolled to keep
// outputs bit-identical across platforms and compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without spare caching; two draws per call, fully deterministic.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        u1 = u1 <= 0.0 ? 0x1.0p-53 : u1;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // [0, n), unbiased via rejection
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    double rademacher() { return (eng_() & 1u) ? 1.0 : -1.0; }

private:
    std::mt19937_64 eng_;
};

}  // namespace phasezoo
