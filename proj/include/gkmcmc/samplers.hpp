#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "gkmcmc/krylov.hpp"
#include "gkmcmc/posterior.hpp"

namespace gkmcmc {

enum class ProposalKind { GenGKLowRank, PrecondLanczos, Tsvd, Rsvd, ExactDense };

std::string to_string(ProposalKind kind);
ProposalKind proposal_kind_from_string(const std::string& name);

struct SamplerConfig {
    Index samples = 500;            // chain length T
    double burnin_fraction = 0.10;  // leading fraction dropped by diagnostics
    Index rank = 50;                // genGK iterations / SVD truncation rank
    LanczosConfig lanczos;          // square roots and inverse square roots
    ProposalKind kind = ProposalKind::GenGKLowRank;
    bool store_x = false;           // keep full states besides the running moments
    std::uint64_t seed = 0;
    Index oversample = 5;           // rSVD oversampling p
    double lambda0 = 1.0;
    double delta0 = 1.0;
    std::optional<HyperParams> fixed_hp;  // freeze (lambda, delta); sample x only
    SqrtPolicy sqrt_policy;

    void validate() const;
};

// Sampled history.  lambda/delta/accepted/log_weight run over t = 1..T; x is
// tracked as running mean/M2 accumulators over the post-burn-in samples, plus
// optionally the full states.  The log_weight column holds log w(x^t) for the
// weight-ratio samplers, the per-step log acceptance ratio for the
// preconditioned sampler, and 0 for block Gibbs.
struct Chain {
    double burnin_fraction = 0.10;
    Index planned = 0;  // T the chain was configured for
    Index n_param = 0;
    double lambda0 = 1.0, delta0 = 1.0;

    std::vector<double> lambda, delta, log_weight;
    std::vector<std::uint8_t> accepted;
    Index sqrt_warnings = 0;  // draws whose Lanczos square root did not converge

    Index retained_count = 0;  // samples folded into the running moments
    Vector x_mean, x_m2;
    std::optional<Matrix> x_states;  // n x T when store_x

    Index size() const { return static_cast<Index>(lambda.size()); }
    Index burnin_count() const {
        return static_cast<Index>(std::floor(burnin_fraction * static_cast<double>(planned)));
    }
    Index accept_count() const;
    Index accept_count_post_burnin() const;
    double acceptance_rate() const;
    Vector x_variance() const;  // unbiased, from the running accumulators

    void start(const SamplerConfig& cfg, Index n);
    void push(double lam, double del, bool acc, double logw, const Vector& x);
};

// Current state of an MCMC chain together with the cached scalars the
// algorithms reuse instead of recomputing: the hyperparameter-free weight core
// (log w = -lambda/2 * weight_core), the R^{-1} data misfit, and the
// Q^{-1} prior norm obtained from the draw-time identities.
struct McmcState {
    Vector x;
    double weight_core = 0.0;
    double resid_norm_sq = 0.0;
    double prior_norm_sq = 0.0;
};

using IterationCallback =
    std::function<void(Index t, const Chain& chain, const McmcState& current, const RngStream& rng)>;

// ---------------------------------------------------------------------------
// genGK low-rank proposal (approximate covariance)
// ---------------------------------------------------------------------------

struct GenGKDraw {
    Vector x_star;
    Vector xi;
    Vector cov_term;  // the covariance half-sample, x_star - x_k
    bool sqrt_converged = true;
};

// x* = mu + Q V_k z + delta^{-1/2} Q^{1/2} (I - Z D Z^T) xi.
GenGKDraw gengk_proposal_from_noise(const GenGKState& state, const LowRankSqrtFactors& factors,
                                    const Vector& z, const HyperParams& hp, const Vector& xi,
                                    const SqrtPolicy& policy = {});
GenGKDraw gengk_proposal_draw(const GenGKState& state, const LowRankSqrtFactors& factors, const Vector& z,
                              const HyperParams& hp, RngStream& rng, const SqrtPolicy& policy = {});

// log w(x) = -lambda/2 ((x-mu)^T A^T R^{-1} A (x-mu) - ||B_k V_k^T (x-mu)||^2);
// one A apply per evaluation.
double gengk_log_weight(const GenGKState& state, const HyperParams& hp, const Vector& x);

// ||x - mu||^2_{Q^{-1}} of a state produced by gengk_proposal_from_noise with
// this (z, xi), evaluated without Q^{-1}.
double gengk_prior_norm(const GenGKState& state, const LowRankSqrtFactors& factors, const GenGKDraw& draw,
                        const Vector& z, const HyperParams& hp);

// ---------------------------------------------------------------------------
// Preconditioned-Lanczos proposal (exact covariance)
// ---------------------------------------------------------------------------

// F = (delta/lambda) Q + Q A^T R^{-1} A Q, so Gamma_cond = lambda Q F^{-1} Q.
OperatorPtr make_sampling_precision(OperatorPtr A, CovariancePtr R, CovariancePtr Q,
                                    double delta_over_lambda);

// G = L^{-T} from a dense Cholesky F = L L^T at reference hyperparameters,
// giving G G^T = F^{-1} exactly at that point.
OperatorPtr dense_f_preconditioner(const HierarchicalModel& model, const HyperParams& hp,
                                   Index max_entries = 4000000);

struct PrecondDraw {
    Vector x_star;
    Vector xi;
    Vector s_vec;  // G^T (G F G^T)^{-1/2} xi, reused by the prior norm
    bool converged = true;
    Index iterations = 0;
};

// x* = x_k + S_F xi with S_F = lambda^{-1/2} Q G^T (G F G^T)^{-1/2}.
PrecondDraw precond_proposal_from_noise(const GenGKState& state, const LinearOperator& G, const Vector& z,
                                        const HyperParams& hp, const Vector& xi, const LanczosConfig& cfg);
PrecondDraw precond_proposal_draw(const GenGKState& state, const LinearOperator& G, const Vector& z,
                                  const HyperParams& hp, RngStream& rng, const LanczosConfig& cfg);

// log alpha_2 = (x* - x)^T (lambda (gamma_1 alpha_1 v_1 - V_k B_k^T B_k z
//               - alpha_{k+1} gamma_{k+1} (e_k^T z) v_{k+1}) - delta V_k z);
// no A applies at evaluation time.
double precond_log_accept(const GenGKState& state, const Vector& z, const HyperParams& hp,
                          const Vector& x_star, const Vector& x_prev);

// ||x - mu||^2_{Q^{-1}} = (x - mu)^T (V_k z + lambda^{-1/2} s_vec) for a state
// drawn with this (z, s_vec).
double precond_prior_norm(const GenGKState& state, const Vector& x, const Vector& z, const Vector& s_vec,
                          double lambda);

// ---------------------------------------------------------------------------
// TSVD / rSVD proposals on the whitened variable (dense-feasible problems)
// ---------------------------------------------------------------------------

// Factors of H = P^T A^T R^{-1} A P where Q = P P^T: right singular vectors and
// squared singular values of R^{-1/2} A P.
struct SvdProposalFactors {
    Matrix prior_chol;  // P, lower triangular, Q = P P^T
    Matrix v;           // n x k
    Vector sigma2;      // k, non-increasing
    bool randomized = false;

    Vector dk(double lambda, double delta) const { return dk_matrix(sigma2, lambda, delta); }
};

Matrix prior_chol_lower(const HierarchicalModel& model, Index max_entries = 4000000);

SvdProposalFactors tsvd_proposal_factors(const HierarchicalModel& model, const Matrix& prior_chol,
                                         Index k, Index max_entries = 4000000);
SvdProposalFactors rsvd_proposal_factors(const HierarchicalModel& model, const Matrix& prior_chol,
                                         Index k, Index p, RngStream& rng, Index max_entries = 4000000);

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

// Everything hyperparameter-independent, built once and shared read-only by
// concurrently running chains.
struct SamplerResources {
    std::shared_ptr<const GenGKState> state;
    std::shared_ptr<const LowRankSqrtFactors> factors;
    std::shared_ptr<const SvdProposalFactors> svd;
    OperatorPtr precond;  // G for the preconditioned sampler
    std::shared_ptr<const DensePosteriorWorkspace> dense;
};

SamplerResources prepare_sampler(const HierarchicalModel& model, const SamplerConfig& cfg,
                                 OperatorPtr precond = nullptr);

// Resumable driver: continues an existing chain from `start` if given,
// invoking the callback after every completed iteration.
void run_chain(const HierarchicalModel& model, const SamplerConfig& cfg, const SamplerResources& res,
               RngStream& rng, Chain& chain, const McmcState* start = nullptr,
               const IterationCallback& callback = {});

Chain run_chain(const HierarchicalModel& model, const SamplerConfig& cfg, RngStream& rng,
                OperatorPtr precond = nullptr);

// Exact-conditional block Gibbs (dense-feasible problems only).
Chain block_gibbs(const HierarchicalModel& model, const SamplerConfig& cfg, RngStream& rng);

// Metropolis-Hastings within Gibbs with the genGK low-rank proposal.
Chain mh_gibbs_gengk(const HierarchicalModel& model, const SamplerConfig& cfg, RngStream& rng);

// Metropolis-Hastings within Gibbs with the preconditioned-Lanczos proposal.
Chain mh_gibbs_precond(const HierarchicalModel& model, const SamplerConfig& cfg, OperatorPtr precond,
                       RngStream& rng);

// Metropolis-Hastings within Gibbs with a TSVD/rSVD proposal.
Chain mh_gibbs_svd(const HierarchicalModel& model, const SamplerConfig& cfg,
                   std::shared_ptr<const SvdProposalFactors> factors, RngStream& rng);

}  // namespace gkmcmc
