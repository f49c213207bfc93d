#pragma once

// Deterministic randomness for the whole library.
//
// Every random quantity is drawn from a SplitMix64 stream keyed by
// (root seed, stream label, stream index). SplitMix64 and the sampling
// transforms below are implementation constants: given the same seed the
// byte-exact same values are produced on every build and platform with
// IEEE-754 doubles. Components derive their own labeled streams, so e.g.
// perturbation row i is reproducible independently of rows before it.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace kllime {

namespace detail {

// Finalizer from SplitMix64 (Steele, Lea & Flood 2014).
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

class RandomStream {
public:
    explicit RandomStream(std::uint64_t state) : state_(state) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return detail::mix64(state_);
    }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; consumes two uniforms per pair.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard u1 = 0: log(0) would be -inf.
        double r = std::sqrt(-2.0 * std::log(u1 + 0x1.0p-53));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Gamma(shape, scale = 1) by Marsaglia-Tsang; shape < 1 via the
    // boosting identity G(a) = G(a+1) * U^{1/a}.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
        if (shape < 1.0) {
            double u = uniform();
            return gamma(shape + 1.0) * std::pow(u + 0x1.0p-53, 1.0 / shape);
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
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u + 0x1.0p-53) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Independent stream for (seed, label, index).
inline RandomStream derive_stream(std::uint64_t seed, std::string_view label,
                                  std::uint64_t index = 0) {
    std::uint64_t s = detail::mix64(seed + 0x9e3779b97f4a7c15ULL);
    s = detail::mix64(s ^ detail::fnv1a(label));
    s = detail::mix64(s ^ (index + 0x9e3779b97f4a7c15ULL));
    return RandomStream(s);
}

} // namespace kllime
