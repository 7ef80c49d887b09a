#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace mobcast {

// Deterministic random stream. The generator (mt19937_64) is fully specified
// by the standard and all transforms below are written out explicitly, so a
// seed yields the same draw sequence on every platform. std::*_distribution
// is never used: its output is implementation-defined.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    static std::string algorithm() { return "mt19937_64/explicit-v1"; }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes exactly two draws per call.
    double normal() {
        const double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Poisson via inversion for small means (event counts per region-day).
    std::uint64_t poisson(double mean) {
        const double l = std::exp(-mean);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > l);
        return k - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; used to parallelize generation across days
    // without sharing generator state.
    RngStream split(std::uint64_t tag) const {
        // splitmix64 finalizer over (seed, tag)
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (tag + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return RngStream(z ^ (z >> 31));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace mobcast
