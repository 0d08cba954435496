#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace gkmcmc {

// PCG64 (XSL-RR 128/64) with explicit streams.  Every sampling routine takes a
// stream by reference; chains own disjoint streams selected by (seed, stream id),
// so concurrent chains never share generator state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0;
        inc_ = ((static_cast<u128>(stream) << 1u) | 1u);
        next_u64();
        state_ += (static_cast<u128>(seed) << 64) | mix(seed ^ 0x9e3779b97f4a7c15ULL);
        next_u64();
    }

    std::uint64_t next_u64() {
        const u128 old = state_;
        state_ = old * multiplier() + inc_;
        const auto xored = static_cast<std::uint64_t>(old >> 64) ^ static_cast<std::uint64_t>(old);
        const auto rot = static_cast<unsigned>(old >> 122);
        return (xored >> rot) | (xored << ((64u - rot) & 63u));
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via the Marsaglia polar method; the spare value is cached,
    // so the draw sequence depends only on the stream state.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    // Gamma(shape, rate) in the shape-rate convention (density x^{a-1} e^{-b x}),
    // Marsaglia-Tsang squeeze with the boost trick for shape < 1.
    double gamma(double shape, double rate) {
        if (!(shape > 0.0) || !(rate > 0.0))
            throw std::invalid_argument("RngStream::gamma: shape and rate must be positive");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0, 1.0);
            const double u = uniform();
            return g * std::pow(u, 1.0 / shape) / rate;
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
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

    // State round trip for exact checkpoint resume.
    struct State {
        std::uint64_t state_hi, state_lo, inc_hi, inc_lo;
        bool have_spare;
        double spare;
    };

    State save() const {
        return {static_cast<std::uint64_t>(state_ >> 64), static_cast<std::uint64_t>(state_),
                static_cast<std::uint64_t>(inc_ >> 64), static_cast<std::uint64_t>(inc_),
                have_spare_, spare_};
    }

    void restore(const State& s) {
        state_ = (static_cast<u128>(s.state_hi) << 64) | s.state_lo;
        inc_ = (static_cast<u128>(s.inc_hi) << 64) | s.inc_lo;
        have_spare_ = s.have_spare;
        spare_ = s.spare;
    }

private:
    using u128 = unsigned __int128;

    static constexpr u128 multiplier() {
        return (static_cast<u128>(2549297995355413924ULL) << 64) | 4865540595714422341ULL;
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    u128 state_ = 0;
    u128 inc_ = 1;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gkmcmc
