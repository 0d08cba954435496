#pragma once

#include <filesystem>

#include "gkmcmc/krylov.hpp"
#include "gkmcmc/posterior.hpp"

namespace gkmcmc {

struct MaternParams {
    double nu = 0.5;
    double ell = 0.25;
};

struct ProblemMeta {
    std::string kind;
    Index nx = 0;
    Index nt = 1;
    Index n_angles = 0;
    Index n_det = 0;
    double noise_level = 0.0;
    double span_deg = 0.0;
    std::uint64_t seed = 0;
};

struct TestProblem {
    HierarchicalModel model;
    Vector x_true;
    double sigma = 0.0;        // noise standard deviation actually injected
    double lambda_true = 0.0;  // 1 / sigma^2
    Eigen::SparseMatrix<double> a_sparse;  // assembled copy of the forward map
    ProblemMeta meta;
};

// Parallel-beam line-integral operator on an nx-by-nx pixel grid: one row per
// (angle, detector) pair, entries are per-pixel intersection lengths.
Eigen::SparseMatrix<double> projection_operator(Index nx, const std::vector<double>& angles_deg,
                                                Index n_det);

// b = b_true + sigma xi with sigma chosen so that sigma ||xi|| / ||b_true||
// equals the requested level exactly.
std::pair<Vector, double> add_noise(const Vector& b_true, double level, RngStream& rng);

// Static tomography: piecewise-constant disk phantom, Matern prior, R = I.
TestProblem make_tomography_problem(Index nx, Index n_angles, double noise_level,
                                    const MaternParams& matern, RngStream& rng);

// Dynamic tomography: block-diagonal forward map whose per-step angle sets are
// rotated copies of each other, two translating Gaussian blobs as truth, and a
// Kronecker space-time Matern prior.
TestProblem make_dynamic_problem(Index nx, Index nt, Index angles_per_step, double span_deg,
                                 double noise_level, const MaternParams& q_time,
                                 const MaternParams& q_space, RngStream& rng);

// Noise precision from the finest-level Haar detail coefficients:
// sigma_hat = median(|d|) / 0.6745, lambda_0 = 1 / sigma_hat^2.  row_len
// groups the data into rows first (0 = one flat row).
double estimate_lambda0(const Vector& b, Index row_len = 0);

struct Delta0Estimate {
    double delta0 = 0.0;
    double eta = 0.0;    // argmin of the projected GCV function
    bool at_edge = false;
};

// GCV on the projected bidiagonal problem over a log grid of eta with
// golden-section refinement; delta_0 = lambda_0 * eta^2.
Delta0Estimate estimate_delta0(const GenGKState& state, double lambda0);

// 5-point finite-difference negative Laplacian with Neumann boundary.
Matrix neumann_laplacian_2d(Index nx);

// G = G_t (x) G_s with G_t^T G_t = Q_t^{-1} and G_s^T G_s = (-Laplacian)^gamma
// (plus a small diagonal shift for invertibility).
OperatorPtr laplacian_preconditioner(Index nx, Index nt, double gamma, const CovarianceOperator& q_time);

// Write the problem as operator (coordinate Matrix Market), data, truth, and a
// metadata JSON for cross-implementation regression.
void export_bundle(const TestProblem& problem, const std::filesystem::path& dir);

}  // namespace gkmcmc
