#pragma once

#include <span>
#include <vector>

#include "gkmcmc/samplers.hpp"

namespace gkmcmc {

// Drops floor(fraction * T) leading samples; the result is a view into the input.
std::span<const double> remove_burnin(std::span<const double> series, double fraction);

// Biased (normalized-by-T) sample autocorrelation at lags 0..max_lag.
std::vector<double> autocorrelation(std::span<const double> series, Index max_lag);

// Effective sample size T / (1 + 2 sum rho_k) with the lag cutoff chosen by
// Geyer's initial-positive-sequence rule, clamped to (0, T].
double ess(std::span<const double> series);

struct GewekeResult {
    double z = 0.0;
    double p = 1.0;
};

// Two-segment mean-equality test: first frac_a of the series against the last
// frac_b, with segment variances deflated by their own effective sample sizes.
// p close to 1 indicates equilibrium.
GewekeResult geweke(std::span<const double> series, double frac_a = 0.10, double frac_b = 0.50);

struct ScalarChainStats {
    std::vector<double> acf;
    double ess = 0.0;
    double geweke_z = 0.0;
    double geweke_p = 1.0;
    double mean = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // empirical 2.5 / 97.5 percentiles
};

struct ChainStats {
    Index retained = 0;
    double acceptance_rate = 0.0;
    double acceptance_rate_post_burnin = 0.0;
    ScalarChainStats lambda, delta;
    Vector x_mean, x_var;
};

ScalarChainStats summarize_scalar(std::span<const double> retained_series, Index max_lag = 100);

ChainStats summarize(const Chain& chain, Index max_lag = 100);

}  // namespace gkmcmc
