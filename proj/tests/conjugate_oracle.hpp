#pragma once

#include <cmath>
#include <vector>

#include <gkmcmc/posterior.hpp>

// Quadrature oracle for the hierarchical posterior on the conjugate fixture
// A = I, R = I, Q = I, mu = 0.  Marginalizing x analytically leaves
//   pi(lambda, delta | b) ~ lambda^{m/2+a_l-1} delta^{n/2+a_d-1}
//       exp(-b_l lambda - b_d delta) (lambda+delta)^{-n/2}
//       exp(-(lambda delta)/(lambda+delta) ||b||^2 / 2),
// which is integrated numerically over delta to get the lambda marginal.  The
// oracle is independent of every sampler code path.
namespace conjugate_oracle {

struct LambdaMarginal {
    std::vector<double> grid;  // lambda values
    std::vector<double> pdf;   // normalized density on the grid
    double mean = 0.0;

    // P(lambda <= q) by trapezoid accumulation.
    double cdf(double q) const {
        double acc = 0.0;
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const double lo = grid[i - 1], hi = grid[i];
            if (q <= lo) break;
            const double upper = std::min(q, hi);
            const double w = (upper - lo) / (hi - lo);
            const double f_hi = pdf[i - 1] + w * (pdf[i] - pdf[i - 1]);
            acc += 0.5 * (pdf[i - 1] + f_hi) * (upper - lo);
        }
        return std::min(1.0, acc);
    }
};

inline double log_joint(const gkmcmc::HierarchicalModel& model, double b_norm_sq, double lam, double del) {
    const double m = static_cast<double>(model.m()), n = static_cast<double>(model.n());
    return (m / 2.0 + model.alpha_lambda - 1.0) * std::log(lam) +
           (n / 2.0 + model.alpha_delta - 1.0) * std::log(del) - model.beta_lambda * lam -
           model.beta_delta * del - (n / 2.0) * std::log(lam + del) -
           0.5 * lam * del / (lam + del) * b_norm_sq;
}

inline LambdaMarginal lambda_marginal(const gkmcmc::HierarchicalModel& model, double lam_lo, double lam_hi,
                                      int n_lam = 2000, int n_del = 1200) {
    const double b_norm_sq = model.b.squaredNorm();
    LambdaMarginal out;
    out.grid.resize(static_cast<std::size_t>(n_lam));
    out.pdf.resize(static_cast<std::size_t>(n_lam));

    // log-spaced delta nodes spanning far past the hyperprior scale
    std::vector<double> del(static_cast<std::size_t>(n_del)), wdel(static_cast<std::size_t>(n_del));
    const double dlo = std::log(1e-7), dhi = std::log(1e5);
    for (int j = 0; j < n_del; ++j)
        del[static_cast<std::size_t>(j)] = std::exp(dlo + (dhi - dlo) * j / (n_del - 1.0));
    for (int j = 0; j < n_del; ++j) {
        const double left = j == 0 ? del[0] : del[static_cast<std::size_t>(j - 1)];
        const double right = j == n_del - 1 ? del.back() : del[static_cast<std::size_t>(j + 1)];
        wdel[static_cast<std::size_t>(j)] = 0.5 * (right - left);
    }

    double peak = -1e300;
    std::vector<std::vector<double>> logf(static_cast<std::size_t>(n_lam),
                                          std::vector<double>(static_cast<std::size_t>(n_del)));
    for (int i = 0; i < n_lam; ++i) {
        out.grid[static_cast<std::size_t>(i)] = lam_lo + (lam_hi - lam_lo) * i / (n_lam - 1.0);
        for (int j = 0; j < n_del; ++j) {
            const double v = log_joint(model, b_norm_sq, out.grid[static_cast<std::size_t>(i)],
                                       del[static_cast<std::size_t>(j)]);
            logf[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
            peak = std::max(peak, v);
        }
    }
    for (int i = 0; i < n_lam; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n_del; ++j)
            acc += std::exp(logf[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - peak) *
                   wdel[static_cast<std::size_t>(j)];
        out.pdf[static_cast<std::size_t>(i)] = acc;
    }

    double z = 0.0, mean = 0.0;
    for (int i = 1; i < n_lam; ++i) {
        const double h = out.grid[static_cast<std::size_t>(i)] - out.grid[static_cast<std::size_t>(i - 1)];
        z += 0.5 * (out.pdf[static_cast<std::size_t>(i)] + out.pdf[static_cast<std::size_t>(i - 1)]) * h;
        mean += 0.5 *
                (out.grid[static_cast<std::size_t>(i)] * out.pdf[static_cast<std::size_t>(i)] +
                 out.grid[static_cast<std::size_t>(i - 1)] * out.pdf[static_cast<std::size_t>(i - 1)]) *
                h;
    }
    for (auto& p : out.pdf) p /= z;
    out.mean = mean / z;
    return out;
}

}  // namespace conjugate_oracle
