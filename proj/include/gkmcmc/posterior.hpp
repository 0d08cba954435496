#pragma once

#include "gkmcmc/operators.hpp"
#include "gkmcmc/rng.hpp"

namespace gkmcmc {

struct HyperParams {
    double lambda = 1.0;  // noise precision scale
    double delta = 1.0;   // prior precision scale

    void validate() const {
        if (!(lambda > 0.0) || !(delta > 0.0))
            throw std::invalid_argument("HyperParams: lambda and delta must be positive");
    }
};

// The full problem instance: data, forward map, noise and prior covariances,
// prior mean, and the Gamma hyperprior parameters in the SHAPE-RATE convention
// (density proportional to x^{a-1} e^{-b x}).
struct HierarchicalModel {
    OperatorPtr A;
    Vector b;
    CovariancePtr R;  // noise covariance shape; must provide an exact inverse
    CovariancePtr Q;  // prior covariance
    Vector mu;
    double alpha_lambda = 1.0;
    double beta_lambda = 1e-4;
    double alpha_delta = 1.0;
    double beta_delta = 1e-4;

    Index m() const { return A->rows(); }
    Index n() const { return A->cols(); }

    void validate() const;

    // ||A x - b||^2 in the R^{-1} norm.
    double residual_norm_sq(const Vector& x) const {
        const Vector r = A->apply(x) - b;
        return r.dot(R->solve(r));
    }
};

// Exact conditional moments x | b, lambda, delta ~ N(x_cond, Gamma_cond) with
// Gamma_cond = (lambda A^T R^{-1} A + delta Q^{-1})^{-1}.
struct DensePosteriorOracle {
    Matrix gamma_cond;
    Vector x_cond;
    Matrix sqrt_factor;  // lower-triangular G with G G^T = Gamma_cond
};

// Caches the hyperparameter-independent dense pieces so repeated conditional
// solves (block Gibbs) cost one Cholesky per iteration instead of re-forming
// A^T R^{-1} A and Q^{-1} every time.
class DensePosteriorWorkspace {
public:
    explicit DensePosteriorWorkspace(HierarchicalModel model, Index max_entries = 4000000);

    DensePosteriorOracle moments(const HyperParams& hp) const;
    double prior_norm_sq(const Vector& x) const;  // (x - mu)^T Q^{-1} (x - mu)

    const Matrix& at_rinv_a() const { return at_rinv_a_; }
    const Matrix& q_inv() const { return q_inv_; }
    const HierarchicalModel& model() const { return model_; }

private:
    HierarchicalModel model_;
    Matrix at_rinv_a_, q_inv_;
    Vector at_rinv_b_, q_inv_mu_;
};

DensePosteriorOracle conditional_moments_dense(const HierarchicalModel& model, const HyperParams& hp,
                                               Index max_entries = 4000000);

// log pi(x | b, lambda, delta) up to an additive constant.  The second form
// takes the prior norm from the caller (samplers compute it matrix-free).
double log_conditional_density(const HierarchicalModel& model, const Vector& x, const HyperParams& hp);
double log_conditional_density(const HierarchicalModel& model, const Vector& x, const HyperParams& hp,
                               double prior_norm_sq);

// The full MAP objective including the hyperprior and log-determinant terms.
double neg_log_posterior(const HierarchicalModel& model, const Vector& x, const HyperParams& hp);

// Marsaglia-Tsang rejection sampling, shape-rate convention.
double gamma_sample(double shape, double rate, RngStream& rng);

// lambda | b, x ~ Gamma(m/2 + alpha_lambda, ||Ax-b||^2_{R^{-1}}/2 + beta_lambda).
double sample_lambda_conditional(const HierarchicalModel& model, const Vector& x, RngStream& rng);
double sample_lambda_conditional(const HierarchicalModel& model, double residual_norm_sq, RngStream& rng);

// delta | b, x ~ Gamma(n/2 + alpha_delta, ||x-mu||^2_{Q^{-1}}/2 + beta_delta).
double sample_delta_conditional(const HierarchicalModel& model, double prior_norm_sq, RngStream& rng);

}  // namespace gkmcmc
