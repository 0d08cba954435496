#include "gkmcmc/samplers.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace gkmcmc {

std::string to_string(ProposalKind kind) {
    switch (kind) {
        case ProposalKind::GenGKLowRank: return "gengk-lowrank";
        case ProposalKind::PrecondLanczos: return "precond-lanczos";
        case ProposalKind::Tsvd: return "tsvd";
        case ProposalKind::Rsvd: return "rsvd";
        case ProposalKind::ExactDense: return "exact-dense";
    }
    return "unknown";
}

ProposalKind proposal_kind_from_string(const std::string& name) {
    if (name == "gengk-lowrank") return ProposalKind::GenGKLowRank;
    if (name == "precond-lanczos") return ProposalKind::PrecondLanczos;
    if (name == "tsvd") return ProposalKind::Tsvd;
    if (name == "rsvd") return ProposalKind::Rsvd;
    if (name == "exact-dense") return ProposalKind::ExactDense;
    throw ConfigError("unknown proposal kind '" + name + "'");
}

void SamplerConfig::validate() const {
    if (samples < 1) throw std::invalid_argument("SamplerConfig: samples must be >= 1");
    if (!(burnin_fraction >= 0.0) || burnin_fraction >= 1.0)
        throw std::invalid_argument("SamplerConfig: burn-in fraction must lie in [0, 1)");
    if (rank < 1) throw std::invalid_argument("SamplerConfig: rank must be >= 1");
    if (oversample < 0) throw std::invalid_argument("SamplerConfig: oversample must be >= 0");
    if (!(lambda0 > 0.0) || !(delta0 > 0.0))
        throw std::invalid_argument("SamplerConfig: initial hyperparameters must be positive");
    lanczos.validate();
    if (fixed_hp) fixed_hp->validate();
}

Index Chain::accept_count() const {
    Index c = 0;
    for (auto a : accepted) c += a;
    return c;
}

Index Chain::accept_count_post_burnin() const {
    Index c = 0;
    for (Index t = burnin_count(); t < size(); ++t) c += accepted[static_cast<std::size_t>(t)];
    return c;
}

double Chain::acceptance_rate() const {
    return size() == 0 ? 0.0 : static_cast<double>(accept_count()) / static_cast<double>(size());
}

Vector Chain::x_variance() const {
    if (retained_count < 2) throw NumericError("Chain::x_variance: fewer than 2 retained samples");
    return x_m2 / static_cast<double>(retained_count - 1);
}

void Chain::start(const SamplerConfig& cfg, Index n) {
    burnin_fraction = cfg.burnin_fraction;
    planned = cfg.samples;
    n_param = n;
    lambda0 = cfg.fixed_hp ? cfg.fixed_hp->lambda : cfg.lambda0;
    delta0 = cfg.fixed_hp ? cfg.fixed_hp->delta : cfg.delta0;
    lambda.clear();
    delta.clear();
    log_weight.clear();
    accepted.clear();
    lambda.reserve(planned);
    delta.reserve(planned);
    log_weight.reserve(planned);
    accepted.reserve(planned);
    retained_count = 0;
    x_mean = Vector::Zero(n);
    x_m2 = Vector::Zero(n);
    if (cfg.store_x) x_states = Matrix::Zero(n, planned);
}

void Chain::push(double lam, double del, bool acc, double logw, const Vector& x) {
    lambda.push_back(lam);
    delta.push_back(del);
    accepted.push_back(acc ? 1 : 0);
    log_weight.push_back(logw);
    const Index t = size();
    if (x_states) x_states->col(t - 1) = x;
    if (t > burnin_count()) {
        ++retained_count;
        const Vector d = x - x_mean;
        x_mean += d / static_cast<double>(retained_count);
        x_m2 += d.cwiseProduct(x - x_mean);
    }
}

// ---------------------------------------------------------------------------
// genGK proposal
// ---------------------------------------------------------------------------

GenGKDraw gengk_proposal_from_noise(const GenGKState& state, const LowRankSqrtFactors& factors,
                                    const Vector& z, const HyperParams& hp, const Vector& xi,
                                    const SqrtPolicy& policy) {
    hp.validate();
    if (z.size() != state.k) throw std::invalid_argument("gengk_proposal_from_noise: z size mismatch");
    if (xi.size() != state.n()) throw std::invalid_argument("gengk_proposal_from_noise: xi size mismatch");
    const Vector dk = factors.dk(hp.lambda, hp.delta);
    const Vector zx = factors.Z.transpose() * xi;
    const Vector y = xi - factors.Z * dk.cwiseProduct(zx);
    GenGKDraw draw;
    draw.xi = xi;
    draw.cov_term = policy.apply(*state.Q, y, &draw.sqrt_converged) / std::sqrt(hp.delta);
    draw.x_star = state.mu + state.QVk() * z + draw.cov_term;
    return draw;
}

GenGKDraw gengk_proposal_draw(const GenGKState& state, const LowRankSqrtFactors& factors, const Vector& z,
                              const HyperParams& hp, RngStream& rng, const SqrtPolicy& policy) {
    Vector xi(state.n());
    for (Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
    return gengk_proposal_from_noise(state, factors, z, hp, xi, policy);
}

namespace {

// (x-mu)^T A^T R^{-1} A (x-mu) - ||B_k V_k^T (x-mu)||^2, the
// hyperparameter-free core of the genGK importance weight.
double gengk_weight_core(const GenGKState& state, const Matrix& bidiag, const Vector& x_shift) {
    const Vector ax = state.A->apply(x_shift);
    const double data_term = ax.dot(state.R->solve(ax));
    const Vector bv = bidiag * (state.Vk().transpose() * x_shift);
    return data_term - bv.squaredNorm();
}

}  // namespace

double gengk_log_weight(const GenGKState& state, const HyperParams& hp, const Vector& x) {
    hp.validate();
    if (x.size() != state.n()) throw std::invalid_argument("gengk_log_weight: x size mismatch");
    return -0.5 * hp.lambda * gengk_weight_core(state, state.bidiagonal(), x - state.mu);
}

double gengk_prior_norm(const GenGKState& state, const LowRankSqrtFactors& factors, const GenGKDraw& draw,
                        const Vector& z, const HyperParams& hp) {
    hp.validate();
    if (z.size() != state.k) throw std::invalid_argument("gengk_prior_norm: z size mismatch");
    const Vector vz = state.Vk() * z;
    const Vector x_shift = state.QVk() * z;
    const Vector dk = factors.dk(hp.lambda, hp.delta);
    const Vector zx = factors.Z.transpose() * draw.xi;
    // xi^T (I - Z D Z^T)^2 xi expands to xi^T xi + (Z^T xi)^T (D^2 - 2D) (Z^T xi).
    const double noise_term =
        draw.xi.squaredNorm() + zx.dot((dk.array() * dk.array() - 2.0 * dk.array()).matrix().cwiseProduct(zx));
    return vz.dot(x_shift + 2.0 * draw.cov_term) + noise_term / hp.delta;
}

// ---------------------------------------------------------------------------
// Preconditioned-Lanczos proposal
// ---------------------------------------------------------------------------

OperatorPtr make_sampling_precision(OperatorPtr A, CovariancePtr R, CovariancePtr Q,
                                    double delta_over_lambda) {
    if (!A || !R || !Q) throw std::invalid_argument("make_sampling_precision: null operator");
    if (!(delta_over_lambda > 0.0))
        throw std::invalid_argument("make_sampling_precision: delta/lambda must be positive");
    const Index n = A->cols();
    auto apply = [A, R, Q, delta_over_lambda](const Vector& v) {
        const Vector qv = Q->apply(v);
        return (delta_over_lambda * qv + Q->apply(A->apply_transpose(R->solve(A->apply(qv))))).eval();
    };
    return std::make_shared<FunctionOperator>(n, n, apply, apply);
}

OperatorPtr dense_f_preconditioner(const HierarchicalModel& model, const HyperParams& hp,
                                   Index max_entries) {
    hp.validate();
    const auto f_op = make_sampling_precision(model.A, model.R, model.Q, hp.delta / hp.lambda);
    Matrix f = dense_materialize(*f_op, max_entries);
    f = ((f + f.transpose()) * 0.5).eval();
    Eigen::LLT<Matrix> llt(f);
    if (llt.info() != Eigen::Success)
        throw NumericError("dense_f_preconditioner: F is not positive definite");
    const Matrix l = llt.matrixL();
    const Index n = f.rows();
    const Matrix g = l.transpose().triangularView<Eigen::Upper>().solve(Matrix::Identity(n, n));
    return std::make_shared<DenseOperator>(g);
}

PrecondDraw precond_proposal_from_noise(const GenGKState& state, const LinearOperator& G, const Vector& z,
                                        const HyperParams& hp, const Vector& xi, const LanczosConfig& cfg) {
    hp.validate();
    if (z.size() != state.k) throw std::invalid_argument("precond_proposal_from_noise: z size mismatch");
    if (xi.size() != state.n()) throw std::invalid_argument("precond_proposal_from_noise: xi size mismatch");
    PrecondDraw draw;
    draw.xi = xi;
    if (xi.norm() == 0.0) {
        draw.s_vec = Vector::Zero(state.n());
        draw.x_star = state.mu + state.QVk() * z;
        return draw;
    }
    const auto f_op = make_sampling_precision(state.A, state.R, state.Q, hp.delta / hp.lambda);
    auto inv_sqrt = precond_inv_sqrt_apply(G, *f_op, xi, cfg);
    draw.converged = inv_sqrt.converged;
    draw.iterations = inv_sqrt.iterations;
    draw.s_vec = G.apply_transpose(inv_sqrt.value);
    draw.x_star = state.mu + state.QVk() * z + state.Q->apply(draw.s_vec) / std::sqrt(hp.lambda);
    return draw;
}

PrecondDraw precond_proposal_draw(const GenGKState& state, const LinearOperator& G, const Vector& z,
                                  const HyperParams& hp, RngStream& rng, const LanczosConfig& cfg) {
    Vector xi(state.n());
    for (Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
    return precond_proposal_from_noise(state, G, z, hp, xi, cfg);
}

namespace {

// lambda (gamma_1 alpha_1 v_1 - V_k B_k^T B_k z - alpha_{k+1} gamma_{k+1} (e_k^T z) v_{k+1})
//   - delta V_k z
Vector precond_accept_direction(const GenGKState& state, const Vector& z, const HyperParams& hp) {
    const Matrix b = state.bidiagonal();
    const Vector bz = b * z;
    Vector dir = state.gamma[0] * state.alpha[0] * state.V.col(0) -
                 state.Vk() * (b.transpose() * bz) -
                 state.alpha[state.k] * state.gamma[state.k] * z[state.k - 1] * state.V.col(state.k);
    return hp.lambda * dir - hp.delta * (state.Vk() * z);
}

}  // namespace

double precond_log_accept(const GenGKState& state, const Vector& z, const HyperParams& hp,
                          const Vector& x_star, const Vector& x_prev) {
    hp.validate();
    if (z.size() != state.k) throw std::invalid_argument("precond_log_accept: z size mismatch");
    if (state.V.cols() != state.k + 1)
        throw std::invalid_argument("precond_log_accept: state lacks the v_{k+1} column");
    return (x_star - x_prev).dot(precond_accept_direction(state, z, hp));
}

double precond_prior_norm(const GenGKState& state, const Vector& x, const Vector& z, const Vector& s_vec,
                          double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("precond_prior_norm: lambda must be positive");
    if (z.size() != state.k) throw std::invalid_argument("precond_prior_norm: z size mismatch");
    return (x - state.mu).dot(state.Vk() * z + s_vec / std::sqrt(lambda));
}

// ---------------------------------------------------------------------------
// TSVD / rSVD factors
// ---------------------------------------------------------------------------

Matrix prior_chol_lower(const HierarchicalModel& model, Index max_entries) {
    Matrix q = dense_materialize(*model.Q, max_entries);
    q = ((q + q.transpose()) * 0.5).eval();
    Eigen::LLT<Matrix> llt(q);
    if (llt.info() != Eigen::Success)
        throw NumericError("prior_chol_lower: Q is not positive definite");
    return llt.matrixL();
}

namespace {

// R^{-1/2} A P, the whitened forward map whose right singular vectors drive
// the SVD proposals.
Matrix whitened_forward(const HierarchicalModel& model, const Matrix& prior_chol, Index max_entries) {
    if (prior_chol.rows() != model.n() || prior_chol.cols() != model.n())
        throw std::invalid_argument("svd proposal factors: prior factor has wrong shape");
    const Matrix a = dense_materialize(*model.A, std::max(max_entries, model.m() * model.n()));
    Matrix ap = a * prior_chol;
    for (Index j = 0; j < ap.cols(); ++j) ap.col(j) = model.R->inv_sqrt_apply(ap.col(j));
    return ap;
}

}  // namespace

SvdProposalFactors tsvd_proposal_factors(const HierarchicalModel& model, const Matrix& prior_chol,
                                         Index k, Index max_entries) {
    model.validate();
    if (k < 1) throw std::invalid_argument("tsvd_proposal_factors: k must be >= 1");
    const Matrix m = whitened_forward(model, prior_chol, max_entries);
    k = std::min(k, std::min(m.rows(), m.cols()));
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinV);
    SvdProposalFactors out;
    out.prior_chol = prior_chol;
    out.v = svd.matrixV().leftCols(k);
    out.sigma2 = svd.singularValues().head(k).array().square();
    out.randomized = false;
    return out;
}

SvdProposalFactors rsvd_proposal_factors(const HierarchicalModel& model, const Matrix& prior_chol,
                                         Index k, Index p, RngStream& rng, Index max_entries) {
    model.validate();
    if (k < 1) throw std::invalid_argument("rsvd_proposal_factors: k must be >= 1");
    if (p < 0) throw std::invalid_argument("rsvd_proposal_factors: oversampling must be >= 0");
    const Matrix m = whitened_forward(model, prior_chol, max_entries);
    const Matrix h = m.transpose() * m;
    const Index n = h.rows();
    k = std::min(k, n);
    const Index q = std::min(k + p, n);

    Matrix omega(n, q);
    for (Index j = 0; j < q; ++j)
        for (Index i = 0; i < n; ++i) omega(i, j) = rng.normal();
    const Matrix y = h * omega;
    Eigen::HouseholderQR<Matrix> qr(y);
    const Matrix qhat = qr.householderQ() * Matrix::Identity(n, q);
    Eigen::SelfAdjointEigenSolver<Matrix> es(qhat.transpose() * h * qhat);

    SvdProposalFactors out;
    out.prior_chol = prior_chol;
    out.v = Matrix(n, k);
    out.sigma2 = Vector(k);
    for (Index i = 0; i < k; ++i) {
        out.sigma2[i] = std::max(0.0, es.eigenvalues()[q - 1 - i]);
        out.v.col(i) = qhat * es.eigenvectors().col(q - 1 - i);
    }
    out.randomized = true;
    return out;
}

// ---------------------------------------------------------------------------
// MH-within-Gibbs loop
// ---------------------------------------------------------------------------

namespace {

// Residual bookkeeping shared by all proposals: with ax = A (x - mu),
// ||A x - b||^2_{R^{-1}} = ax^T R^{-1} ax - 2 (R^{-1} b0)^T ax + gamma_1^2.
struct MisfitCache {
    Vector rinv_b0;
    double gamma1_sq = 0.0;

    explicit MisfitCache(const GenGKState& state) {
        rinv_b0 = state.R->solve(state.b0);
        gamma1_sq = state.gamma[0] * state.gamma[0];
    }
    MisfitCache(const HierarchicalModel& model, const Vector& b0) {
        rinv_b0 = model.R->solve(b0);
        gamma1_sq = b0.dot(rinv_b0);
    }
    double residual(const Vector& ax, double data_term) const {
        return data_term - 2.0 * rinv_b0.dot(ax) + gamma1_sq;
    }
};

class GenGKLoop {
public:
    GenGKLoop(const GenGKState& state, const LowRankSqrtFactors& factors, const SqrtPolicy& policy,
              Index* warnings)
        : state_(state), factors_(factors), policy_(policy), warnings_(warnings),
          bidiag_(state.bidiagonal()), misfit_(state) {}

    void refresh(const HyperParams& hp) {
        hp_ = hp;
        z_ = projected_tikhonov_solve(state_, hp.lambda, hp.delta);
    }

    McmcState draw(RngStream& rng) {
        auto d = gengk_proposal_draw(state_, factors_, z_, hp_, rng, policy_);
        if (!d.sqrt_converged && warnings_) ++*warnings_;
        McmcState s;
        s.x = std::move(d.x_star);
        const Vector x_shift = s.x - state_.mu;
        const Vector ax = state_.A->apply(x_shift);
        const double data_term = ax.dot(state_.R->solve(ax));
        const Vector bv = bidiag_ * (state_.Vk().transpose() * x_shift);
        s.weight_core = data_term - bv.squaredNorm();
        s.resid_norm_sq = misfit_.residual(ax, data_term);
        s.prior_norm_sq = gengk_prior_norm(state_, factors_, d, z_, hp_);
        return s;
    }

    double log_accept(const McmcState& star, const McmcState& cur) const {
        return -0.5 * hp_.lambda * (star.weight_core - cur.weight_core);
    }

    double chain_log(const McmcState& cur, double /*log_alpha*/) const {
        return -0.5 * hp_.lambda * cur.weight_core;
    }

private:
    const GenGKState& state_;
    const LowRankSqrtFactors& factors_;
    SqrtPolicy policy_;
    Index* warnings_;
    Matrix bidiag_;
    MisfitCache misfit_;
    HyperParams hp_;
    Vector z_;
};

class PrecondLoop {
public:
    PrecondLoop(const GenGKState& state, const LinearOperator& precond, const LanczosConfig& cfg,
                Index* warnings)
        : state_(state), precond_(precond), cfg_(cfg), warnings_(warnings), misfit_(state) {}

    void refresh(const HyperParams& hp) {
        hp_ = hp;
        z_ = projected_tikhonov_solve(state_, hp.lambda, hp.delta);
        direction_ = precond_accept_direction(state_, z_, hp_);
    }

    McmcState draw(RngStream& rng) {
        auto d = precond_proposal_draw(state_, precond_, z_, hp_, rng, cfg_);
        if (!d.converged && warnings_) ++*warnings_;
        McmcState s;
        s.prior_norm_sq = precond_prior_norm(state_, d.x_star, z_, d.s_vec, hp_.lambda);
        s.x = std::move(d.x_star);
        const Vector ax = state_.A->apply(s.x - state_.mu);
        s.resid_norm_sq = misfit_.residual(ax, ax.dot(state_.R->solve(ax)));
        s.weight_core = 0.0;
        return s;
    }

    double log_accept(const McmcState& star, const McmcState& cur) const {
        return (star.x - cur.x).dot(direction_);
    }

    double chain_log(const McmcState& /*cur*/, double log_alpha) const { return log_alpha; }

private:
    const GenGKState& state_;
    const LinearOperator& precond_;
    LanczosConfig cfg_;
    Index* warnings_;
    MisfitCache misfit_;
    HyperParams hp_;
    Vector z_;
    Vector direction_;
};

class SvdLoop {
public:
    SvdLoop(const HierarchicalModel& model, const SvdProposalFactors& factors)
        : model_(model), factors_(factors), b0_(model.b - model.A->apply(model.mu)), misfit_(model, b0_) {
        at_rinv_b0_ = model.A->apply_transpose(model.R->solve(b0_));
        y0_ = factors_.prior_chol.transpose() * at_rinv_b0_;
        sigma_ = factors_.sigma2.cwiseSqrt();
    }

    void refresh(const HyperParams& hp) {
        hp_ = hp;
        // mean shift = Gamma_hat * lambda A^T R^{-1} b0 through the Woodbury form
        // of (delta I + lambda V S^2 V^T)^{-1}.
        const Eigen::ArrayXd filt =
            hp.lambda * factors_.sigma2.array() / (hp.delta + hp.lambda * factors_.sigma2.array());
        const Vector vty = factors_.v.transpose() * y0_;
        mean_shift_ = (hp.lambda / hp.delta) *
                      (factors_.prior_chol * (y0_ - factors_.v * (filt * vty.array()).matrix()));
        dk_ = factors_.dk(hp.lambda, hp.delta);
    }

    McmcState draw(RngStream& rng) {
        Vector xi(model_.n());
        for (Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
        const Vector vxi = factors_.v.transpose() * xi;
        const Vector x_shift =
            mean_shift_ +
            (factors_.prior_chol * (xi - factors_.v * dk_.cwiseProduct(vxi))) / std::sqrt(hp_.delta);
        McmcState s;
        s.x = model_.mu + x_shift;
        const Vector ax = model_.A->apply(x_shift);
        const double data_term = ax.dot(model_.R->solve(ax));
        const Vector w = factors_.prior_chol.triangularView<Eigen::Lower>().solve(x_shift);
        s.prior_norm_sq = w.squaredNorm();
        s.weight_core = data_term - sigma_.cwiseProduct(factors_.v.transpose() * w).squaredNorm();
        s.resid_norm_sq = misfit_.residual(ax, data_term);
        return s;
    }

    double log_accept(const McmcState& star, const McmcState& cur) const {
        return -0.5 * hp_.lambda * (star.weight_core - cur.weight_core);
    }

    double chain_log(const McmcState& cur, double /*log_alpha*/) const {
        return -0.5 * hp_.lambda * cur.weight_core;
    }

private:
    const HierarchicalModel& model_;
    const SvdProposalFactors& factors_;
    Vector b0_;
    MisfitCache misfit_;
    Vector at_rinv_b0_, y0_, sigma_;
    HyperParams hp_;
    Vector mean_shift_;
    Vector dk_;
};

template <class Loop>
void run_mh_loop(const HierarchicalModel& model, const SamplerConfig& cfg, Loop& loop, RngStream& rng,
                 Chain& chain, const McmcState* start, const IterationCallback& callback) {
    HyperParams hp = cfg.fixed_hp.value_or(HyperParams{cfg.lambda0, cfg.delta0});
    McmcState cur;
    if (start != nullptr && chain.size() > 0) {
        cur = *start;
        if (cfg.fixed_hp) loop.refresh(hp);
    } else {
        chain.start(cfg, model.n());
        loop.refresh(hp);
        cur = loop.draw(rng);
    }
    for (Index t = chain.size() + 1; t <= cfg.samples; ++t) {
        if (!cfg.fixed_hp) {
            hp.lambda = sample_lambda_conditional(model, cur.resid_norm_sq, rng);
            hp.delta = sample_delta_conditional(model, cur.prior_norm_sq, rng);
            loop.refresh(hp);
        }
        McmcState star = loop.draw(rng);
        const double log_alpha = loop.log_accept(star, cur);
        const double u = rng.uniform();
        const bool accept = std::log(u) < log_alpha;
        if (accept) cur = std::move(star);
        chain.push(hp.lambda, hp.delta, accept, loop.chain_log(cur, log_alpha), cur.x);
        if (callback) callback(t, chain, cur, rng);
    }
}

void run_block_gibbs(const HierarchicalModel& model, const SamplerConfig& cfg,
                     const DensePosteriorWorkspace& ws, RngStream& rng, Chain& chain,
                     const McmcState* start, const IterationCallback& callback) {
    HyperParams hp = cfg.fixed_hp.value_or(HyperParams{cfg.lambda0, cfg.delta0});
    McmcState cur;
    if (start != nullptr && chain.size() > 0) {
        cur = *start;
    } else {
        chain.start(cfg, model.n());
        cur.x = model.mu;
        cur.resid_norm_sq = model.residual_norm_sq(cur.x);
        cur.prior_norm_sq = 0.0;
    }
    for (Index t = chain.size() + 1; t <= cfg.samples; ++t) {
        if (!cfg.fixed_hp) {
            hp.lambda = sample_lambda_conditional(model, cur.resid_norm_sq, rng);
            hp.delta = sample_delta_conditional(model, cur.prior_norm_sq, rng);
        }
        const auto moments = ws.moments(hp);
        Vector eps(model.n());
        for (Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
        cur.x = moments.x_cond + moments.sqrt_factor * eps;
        cur.resid_norm_sq = model.residual_norm_sq(cur.x);
        cur.prior_norm_sq = ws.prior_norm_sq(cur.x);
        chain.push(hp.lambda, hp.delta, true, 0.0, cur.x);
        if (callback) callback(t, chain, cur, rng);
    }
}

}  // namespace

SamplerResources prepare_sampler(const HierarchicalModel& model, const SamplerConfig& cfg,
                                 OperatorPtr precond) {
    model.validate();
    cfg.validate();
    SamplerResources res;
    switch (cfg.kind) {
        case ProposalKind::GenGKLowRank: {
            res.state = std::make_shared<const GenGKState>(
                gengk_bidiagonalize(model.A, model.R, model.Q, model.b, model.mu, cfg.rank, true));
            res.factors =
                std::make_shared<const LowRankSqrtFactors>(lowrank_sqrt_factors(*res.state, cfg.sqrt_policy));
            break;
        }
        case ProposalKind::PrecondLanczos: {
            res.state = std::make_shared<const GenGKState>(
                gengk_bidiagonalize(model.A, model.R, model.Q, model.b, model.mu, cfg.rank, true));
            res.precond = precond ? std::move(precond)
                                  : dense_f_preconditioner(model, HyperParams{cfg.lambda0, cfg.delta0});
            break;
        }
        case ProposalKind::Tsvd:
            res.svd = std::make_shared<const SvdProposalFactors>(
                tsvd_proposal_factors(model, prior_chol_lower(model), cfg.rank));
            break;
        case ProposalKind::Rsvd: {
            RngStream factor_rng(cfg.seed, 0x1defaced);
            res.svd = std::make_shared<const SvdProposalFactors>(rsvd_proposal_factors(
                model, prior_chol_lower(model), cfg.rank, cfg.oversample, factor_rng));
            break;
        }
        case ProposalKind::ExactDense:
            res.dense = std::make_shared<const DensePosteriorWorkspace>(model);
            break;
    }
    return res;
}

void run_chain(const HierarchicalModel& model, const SamplerConfig& cfg, const SamplerResources& res,
               RngStream& rng, Chain& chain, const McmcState* start, const IterationCallback& callback) {
    switch (cfg.kind) {
        case ProposalKind::GenGKLowRank: {
            if (!res.state || !res.factors) throw std::invalid_argument("run_chain: missing genGK resources");
            GenGKLoop loop(*res.state, *res.factors, cfg.sqrt_policy, &chain.sqrt_warnings);
            run_mh_loop(model, cfg, loop, rng, chain, start, callback);
            break;
        }
        case ProposalKind::PrecondLanczos: {
            if (!res.state || !res.precond)
                throw std::invalid_argument("run_chain: missing preconditioned-sampler resources");
            PrecondLoop loop(*res.state, *res.precond, cfg.lanczos, &chain.sqrt_warnings);
            run_mh_loop(model, cfg, loop, rng, chain, start, callback);
            break;
        }
        case ProposalKind::Tsvd:
        case ProposalKind::Rsvd: {
            if (!res.svd) throw std::invalid_argument("run_chain: missing SVD proposal factors");
            SvdLoop loop(model, *res.svd);
            run_mh_loop(model, cfg, loop, rng, chain, start, callback);
            break;
        }
        case ProposalKind::ExactDense: {
            if (!res.dense) throw std::invalid_argument("run_chain: missing dense workspace");
            run_block_gibbs(model, cfg, *res.dense, rng, chain, start, callback);
            break;
        }
    }
}

Chain run_chain(const HierarchicalModel& model, const SamplerConfig& cfg, RngStream& rng,
                OperatorPtr precond) {
    const auto res = prepare_sampler(model, cfg, std::move(precond));
    Chain chain;
    run_chain(model, cfg, res, rng, chain, nullptr, {});
    return chain;
}

Chain block_gibbs(const HierarchicalModel& model, const SamplerConfig& cfg, RngStream& rng) {
    SamplerConfig c = cfg;
    c.kind = ProposalKind::ExactDense;
    return run_chain(model, c, rng);
}

Chain mh_gibbs_gengk(const HierarchicalModel& model, const SamplerConfig& cfg, RngStream& rng) {
    SamplerConfig c = cfg;
    c.kind = ProposalKind::GenGKLowRank;
    return run_chain(model, c, rng);
}

Chain mh_gibbs_precond(const HierarchicalModel& model, const SamplerConfig& cfg, OperatorPtr precond,
                       RngStream& rng) {
    SamplerConfig c = cfg;
    c.kind = ProposalKind::PrecondLanczos;
    return run_chain(model, c, rng, std::move(precond));
}

Chain mh_gibbs_svd(const HierarchicalModel& model, const SamplerConfig& cfg,
                   std::shared_ptr<const SvdProposalFactors> factors, RngStream& rng) {
    if (!factors) throw std::invalid_argument("mh_gibbs_svd: null factors");
    SamplerConfig c = cfg;
    c.kind = factors->randomized ? ProposalKind::Rsvd : ProposalKind::Tsvd;
    SamplerResources res;
    res.svd = std::move(factors);
    Chain chain;
    run_chain(model, c, res, rng, chain, nullptr, {});
    return chain;
}

}  // namespace gkmcmc
