#include "gkmcmc/posterior.hpp"

#include <cmath>

namespace gkmcmc {

void HierarchicalModel::validate() const {
    if (!A || !R || !Q) throw std::invalid_argument("HierarchicalModel: null operator");
    if (b.size() != A->rows() || mu.size() != A->cols())
        throw std::invalid_argument("HierarchicalModel: b or mu dimension mismatch");
    if (R->dim() != A->rows() || Q->dim() != A->cols())
        throw std::invalid_argument("HierarchicalModel: covariance dimension mismatch");
    if (!R->has_solve()) throw std::invalid_argument("HierarchicalModel: R must provide an exact inverse");
    if (!(alpha_lambda > 0.0) || !(beta_lambda > 0.0) || !(alpha_delta > 0.0) || !(beta_delta > 0.0))
        throw std::invalid_argument("HierarchicalModel: hyperprior parameters must be positive");
}

DensePosteriorWorkspace::DensePosteriorWorkspace(HierarchicalModel model, Index max_entries)
    : model_(std::move(model)) {
    model_.validate();
    const Index n = model_.n();
    if (n * n > max_entries)
        throw std::invalid_argument("DensePosteriorWorkspace: problem exceeds the desk-scale cap");

    const Matrix a = dense_materialize(*model_.A, std::max(max_entries, model_.m() * n));
    Matrix rinv_a(model_.m(), n);
    for (Index j = 0; j < n; ++j) rinv_a.col(j) = model_.R->solve(a.col(j));
    at_rinv_a_ = a.transpose() * rinv_a;
    at_rinv_b_ = a.transpose() * model_.R->solve(model_.b);

    const Matrix q = dense_materialize(*model_.Q, max_entries);
    Eigen::LLT<Matrix> qllt(q);
    if (qllt.info() != Eigen::Success)
        throw NumericError("DensePosteriorWorkspace: prior covariance is not positive definite");
    q_inv_ = qllt.solve(Matrix::Identity(n, n));
    q_inv_ = ((q_inv_ + q_inv_.transpose()) * 0.5).eval();
    q_inv_mu_ = q_inv_ * model_.mu;
}

DensePosteriorOracle DensePosteriorWorkspace::moments(const HyperParams& hp) const {
    hp.validate();
    const Index n = model_.n();
    const Matrix precision = hp.lambda * at_rinv_a_ + hp.delta * q_inv_;
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success)
        throw NumericError("conditional_moments_dense: numerically singular precision matrix");
    DensePosteriorOracle out;
    out.x_cond = llt.solve(hp.lambda * at_rinv_b_ + hp.delta * q_inv_mu_);
    out.gamma_cond = llt.solve(Matrix::Identity(n, n));
    out.gamma_cond = ((out.gamma_cond + out.gamma_cond.transpose()) * 0.5).eval();
    Eigen::LLT<Matrix> gllt(out.gamma_cond);
    if (gllt.info() != Eigen::Success)
        throw NumericError("conditional_moments_dense: covariance lost positive definiteness");
    out.sqrt_factor = gllt.matrixL();
    return out;
}

double DensePosteriorWorkspace::prior_norm_sq(const Vector& x) const {
    const Vector d = x - model_.mu;
    return d.dot(q_inv_ * d);
}

DensePosteriorOracle conditional_moments_dense(const HierarchicalModel& model, const HyperParams& hp,
                                               Index max_entries) {
    return DensePosteriorWorkspace(model, max_entries).moments(hp);
}

double log_conditional_density(const HierarchicalModel& model, const Vector& x, const HyperParams& hp) {
    if (!model.Q->has_solve())
        throw std::invalid_argument(
            "log_conditional_density: Q has no exact inverse; supply the prior norm instead");
    const Vector d = x - model.mu;
    return log_conditional_density(model, x, hp, d.dot(model.Q->solve(d)));
}

double log_conditional_density(const HierarchicalModel& model, const Vector& x, const HyperParams& hp,
                               double prior_norm_sq) {
    hp.validate();
    return -0.5 * hp.lambda * model.residual_norm_sq(x) - 0.5 * hp.delta * prior_norm_sq;
}

double neg_log_posterior(const HierarchicalModel& model, const Vector& x, const HyperParams& hp) {
    hp.validate();
    const Vector d = x - model.mu;
    const double prior_norm_sq = d.dot(model.Q->solve(d));
    const double mh = static_cast<double>(model.m()) / 2.0;
    const double nh = static_cast<double>(model.n()) / 2.0;
    return 0.5 * hp.lambda * model.residual_norm_sq(x) + 0.5 * hp.delta * prior_norm_sq +
           model.beta_lambda * hp.lambda + model.beta_delta * hp.delta -
           (mh + model.alpha_lambda - 1.0) * std::log(hp.lambda) -
           (nh + model.alpha_delta - 1.0) * std::log(hp.delta);
}

double gamma_sample(double shape, double rate, RngStream& rng) { return rng.gamma(shape, rate); }

double sample_lambda_conditional(const HierarchicalModel& model, const Vector& x, RngStream& rng) {
    return sample_lambda_conditional(model, model.residual_norm_sq(x), rng);
}

double sample_lambda_conditional(const HierarchicalModel& model, double residual_norm_sq, RngStream& rng) {
    if (residual_norm_sq < 0.0)
        throw std::invalid_argument("sample_lambda_conditional: negative residual norm");
    return rng.gamma(static_cast<double>(model.m()) / 2.0 + model.alpha_lambda,
                     0.5 * residual_norm_sq + model.beta_lambda);
}

double sample_delta_conditional(const HierarchicalModel& model, double prior_norm_sq, RngStream& rng) {
    if (prior_norm_sq < 0.0) throw std::invalid_argument("sample_delta_conditional: negative prior norm");
    return rng.gamma(static_cast<double>(model.n()) / 2.0 + model.alpha_delta,
                     0.5 * prior_norm_sq + model.beta_delta);
}

}  // namespace gkmcmc
