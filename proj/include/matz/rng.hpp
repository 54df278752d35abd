#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace matz {

/// Deterministic RNG. mt19937_64 output is pinned by the standard; the
/// distributions here are implemented inline so streams are reproducible
/// across compilers and standard libraries (std::normal_distribution is not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_u64(std::uint64_t n) { return engine_() % n; }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_u64(n)); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    /// Derive an independent sub-stream, e.g. one per shard or per example.
    Rng fork(std::uint64_t salt) const {
        std::uint64_t s = seed_ ^ (salt + 0x9e3779b97f4a7c15ULL);
        s ^= s >> 30;
        s *= 0xbf58476d1ce4e5b9ULL;
        s ^= s >> 27;
        s *= 0x94d049bb133111ebULL;
        s ^= s >> 31;
        return Rng(s);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace matz
