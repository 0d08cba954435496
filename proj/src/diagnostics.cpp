#include "gkmcmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace gkmcmc {

namespace {

double mean_of(std::span<const double> s) {
    double acc = 0.0;
    for (double v : s) acc += v;
    return acc / static_cast<double>(s.size());
}

double variance_of(std::span<const double> s, double mean) {
    double acc = 0.0;
    for (double v : s) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(s.size() - 1);
}

bool is_constant(std::span<const double> s) {
    for (double v : s)
        if (v != s.front()) return false;
    return true;
}

double acf_at(std::span<const double> s, double mean, double c0, Index lag) {
    double acc = 0.0;
    const Index t_max = static_cast<Index>(s.size()) - lag;
    for (Index t = 0; t < t_max; ++t) acc += (s[t] - mean) * (s[t + lag] - mean);
    return acc / (static_cast<double>(s.size()) * c0);
}

double percentile(std::vector<double> sorted, double p) {
    std::sort(sorted.begin(), sorted.end());
    const double idx = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(idx));
    const auto hi = static_cast<std::size_t>(std::ceil(idx));
    const double w = idx - std::floor(idx);
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

}  // namespace

std::span<const double> remove_burnin(std::span<const double> series, double fraction) {
    if (!(fraction >= 0.0) || fraction >= 1.0)
        throw std::invalid_argument("remove_burnin: fraction must lie in [0, 1)");
    const auto drop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(series.size())));
    if (drop >= series.size()) throw std::invalid_argument("remove_burnin: empty result");
    return series.subspan(drop);
}

std::vector<double> autocorrelation(std::span<const double> series, Index max_lag) {
    const auto t = static_cast<Index>(series.size());
    if (max_lag < 0 || t <= max_lag)
        throw std::invalid_argument("autocorrelation: series must be longer than max_lag");
    if (is_constant(series)) throw NumericError("autocorrelation: degenerate constant chain");
    const double mean = mean_of(series);
    double c0 = 0.0;
    for (double v : series) c0 += (v - mean) * (v - mean);
    c0 /= static_cast<double>(t);
    std::vector<double> out(static_cast<std::size_t>(max_lag) + 1);
    out[0] = 1.0;
    for (Index k = 1; k <= max_lag; ++k) out[static_cast<std::size_t>(k)] = acf_at(series, mean, c0, k);
    return out;
}

double ess(std::span<const double> series) {
    const auto t = static_cast<Index>(series.size());
    if (t < 2) throw std::invalid_argument("ess: need at least two samples");
    if (is_constant(series)) throw NumericError("ess: degenerate constant chain");
    const double mean = mean_of(series);
    double c0 = 0.0;
    for (double v : series) c0 += (v - mean) * (v - mean);
    c0 /= static_cast<double>(t);

    // Geyer initial positive sequence: add lag pairs while their sum stays positive.
    double rho_sum = 0.0;
    for (Index k = 1; k + 1 <= t - 1; k += 2) {
        const double pair = acf_at(series, mean, c0, k) + acf_at(series, mean, c0, k + 1);
        if (pair <= 0.0) break;
        rho_sum += pair;
    }
    const double tau = 1.0 + 2.0 * rho_sum;
    const double raw = static_cast<double>(t) / tau;
    return std::clamp(raw, 1.0, static_cast<double>(t));
}

GewekeResult geweke(std::span<const double> series, double frac_a, double frac_b) {
    const auto t = static_cast<Index>(series.size());
    const auto ta = static_cast<Index>(std::floor(frac_a * static_cast<double>(t)));
    const auto tb = static_cast<Index>(std::floor(frac_b * static_cast<double>(t)));
    if (ta < 2 || tb < 2) throw std::invalid_argument("geweke: segments too short");
    const auto seg_a = series.first(static_cast<std::size_t>(ta));
    const auto seg_b = series.last(static_cast<std::size_t>(tb));
    if (is_constant(seg_a) || is_constant(seg_b)) throw NumericError("geweke: degenerate constant segment");

    const double mu_a = mean_of(seg_a), mu_b = mean_of(seg_b);
    const double var_a = variance_of(seg_a, mu_a), var_b = variance_of(seg_b, mu_b);
    const double ess_a = ess(seg_a), ess_b = ess(seg_b);
    GewekeResult out;
    out.z = (mu_a - mu_b) / std::sqrt(var_a / ess_a + var_b / ess_b);
    out.p = std::erfc(std::abs(out.z) / std::sqrt(2.0));
    return out;
}

ScalarChainStats summarize_scalar(std::span<const double> retained, Index max_lag) {
    ScalarChainStats st;
    const auto len = static_cast<Index>(retained.size());
    st.acf = autocorrelation(retained, std::min<Index>(max_lag, len - 1));
    st.ess = ess(retained);
    const auto gw = geweke(retained);
    st.geweke_z = gw.z;
    st.geweke_p = gw.p;
    st.mean = mean_of(retained);
    std::vector<double> copy(retained.begin(), retained.end());
    st.ci_lo = percentile(copy, 0.025);
    st.ci_hi = percentile(copy, 0.975);
    return st;
}

ChainStats summarize(const Chain& chain, Index max_lag) {
    const auto lam = remove_burnin(std::span<const double>(chain.lambda), chain.burnin_fraction);
    const auto del = remove_burnin(std::span<const double>(chain.delta), chain.burnin_fraction);
    if (static_cast<Index>(lam.size()) < 2)
        throw std::invalid_argument("summarize: fewer than 2 retained samples");
    ChainStats st;
    st.retained = static_cast<Index>(lam.size());
    st.acceptance_rate = chain.acceptance_rate();
    const Index post = chain.size() - chain.burnin_count();
    st.acceptance_rate_post_burnin =
        post > 0 ? static_cast<double>(chain.accept_count_post_burnin()) / static_cast<double>(post) : 0.0;
    st.lambda = summarize_scalar(lam, max_lag);
    st.delta = summarize_scalar(del, max_lag);
    if (chain.n_param > 0 && chain.retained_count >= 2) {
        st.x_mean = chain.x_mean;
        st.x_var = chain.x_variance();
    }
    return st;
}

}  // namespace gkmcmc
