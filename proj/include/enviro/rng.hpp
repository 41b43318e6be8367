#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace enviro {

// Deterministic random source. std::*_distribution output is
// implementation-defined, so uniform/normal are generated explicitly here;
// results are identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix(seed)) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Standard normal via Box-Muller (one value per pair of uniforms).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Derive an independent stream key, e.g. mix(seed, item_index).
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        return splitmix(splitmix(a) ^ (b + 0x9e3779b97f4a7c15ULL));
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
};

}  // namespace enviro
