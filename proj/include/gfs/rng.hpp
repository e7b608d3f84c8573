#pragma once

#include <cmath>
#include <cstdint>

namespace gfs {

// Stateless counter-based random stream. Every draw is a pure function of
// (key, counter), so shards can consume disjoint counter ranges concurrently
// and results do not depend on the degree of parallelism.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    static std::uint64_t mix(std::uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    // Key derivation chain: fold words one at a time with golden-ratio steps.
    static std::uint64_t derive(std::uint64_t base, std::uint64_t word) {
        return mix(base + 0x9e3779b97f4a7c15ULL * (word + 1));
    }
    static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
        return derive(derive(base, a), b);
    }
    static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                                std::uint64_t c) {
        return derive(derive(base, a, b), c);
    }

    std::uint64_t bits(std::uint64_t counter) const {
        return mix(key_ ^ mix(counter + 0x9e3779b97f4a7c15ULL));
    }

    // Uniform in the open interval (0,1); never returns an endpoint.
    double uniform(std::uint64_t counter) const {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal draw. Consumes counters {2i, 2i+1}.
    double normal(std::uint64_t i) const {
        const double u1 = uniform(2 * i);
        const double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

}  // namespace gfs
