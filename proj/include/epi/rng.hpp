#ifndef EPI_RNG_HPP
#define EPI_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace epi {

/// splitmix64 finalizer; used to mix (base_seed, stream index) into an
/// independent seed per replicate / per sampled path.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Replicate r of an ensemble with base seed s uses mix_seed(s, r).
inline std::uint64_t mix_seed(std::uint64_t base_seed, std::uint64_t stream) {
    return splitmix64(base_seed ^ splitmix64(stream));
}

/// Seedable RNG with hand-rolled variate generators. mt19937_64 output is
/// fully specified by the standard, and the transforms below avoid the
/// implementation-defined std::*_distribution algorithms, so streams are
/// reproducible bit-for-bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on (0,1): 53-bit mantissa, never returns exactly 0.
    double uniform() {
        double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-53;
    }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Lemire-style rejection to avoid modulo bias.
        std::uint64_t x = engine_();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t threshold = (-n) % n;
            while (lo < threshold) {
                x = engine_();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    /// Standard normal via Box-Muller (one value per call; the pair's second
    /// member is cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Gamma(shape, scale) via Marsaglia-Tsang, boosted for shape < 1.
    double gamma(double shape, double scale) {
        if (shape < 1.0) {
            double u = uniform();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace epi

#endif
