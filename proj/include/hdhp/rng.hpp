#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace hdhp {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Random source with all distribution code inlined, so that a fixed seed
// yields the same stream everywhere and each consumer can own an
// independent, seed-derived stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent stream for consumer `stream` under a common master seed.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t s = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        std::uint64_t lo = splitmix64(s);
        std::uint64_t hi = splitmix64(s);
        return Rng(lo ^ (hi << 1));
    }

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // (0, 1]
    double uniform_pos() { return 1.0 - uniform(); }

    // strictly positive
    double exponential(double rate) {
        if (!(rate > 0.0)) throw std::domain_error("exponential: rate must be > 0");
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return -std::log1p(-u) / rate;
    }

    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Gamma(shape, rate) by Marsaglia-Tsang; shape < 1 via the boost trick.
    double gamma(double shape, double rate) {
        if (!(shape > 0.0) || !(rate > 0.0)) throw std::domain_error("gamma: shape and rate must be > 0");
        if (shape < 1.0) {
            double u = uniform_pos();
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_pos();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v / rate;
        }
    }

    std::vector<double> dirichlet(std::span<const double> concentration) {
        std::vector<double> out(concentration.size());
        double total = 0.0;
        for (std::size_t i = 0; i < concentration.size(); ++i) {
            out[i] = gamma(concentration[i], 1.0);
            total += out[i];
        }
        if (total <= 0.0) {
            // all-gamma underflow; fall back to the mode of the prior
            const double v = 1.0 / static_cast<double>(out.size());
            for (auto& x : out) x = v;
            return out;
        }
        for (auto& x : out) x /= total;
        return out;
    }

    std::vector<double> dirichlet_symmetric(double concentration, std::size_t k) {
        std::vector<double> c(k, concentration);
        return dirichlet(c);
    }

    // Index draw proportional to unnormalized nonnegative weights.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w)) throw std::domain_error("categorical: weights must be finite and >= 0");
            total += w;
        }
        if (total <= 0.0) throw std::domain_error("categorical: total weight is zero");
        double u = uniform() * total;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            last_positive = i;
            if (u < weights[i]) return i;
            u -= weights[i];
        }
        return last_positive;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace hdhp
