#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace v2x {

// splitmix64, used to derive independent seed streams from one master seed.
inline uint64_t mix_seed(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return mix_seed(master ^ mix_seed(stream));
}

// Seeded generator with hand-rolled distributions so that identical seeds
// give identical draws regardless of the standard library in use.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return (next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) {
        return static_cast<int>(uniform() * n) % n;
    }

    // standard normal via Box-Muller (fresh pair each call, second value dropped;
    // keeps the draw count per call fixed, which matters for stream reproducibility)
    double normal() {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // exponential with the given mean
    double exponential(double mean) {
        double u = 0.0;
        do { u = uniform(); } while (u <= 0.0);
        return -mean * std::log(u);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace v2x
