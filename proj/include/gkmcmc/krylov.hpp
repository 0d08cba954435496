#pragma once

#include <filesystem>
#include <functional>

#include "gkmcmc/operators.hpp"

namespace gkmcmc {

struct LanczosConfig {
    Index max_iter = 200;
    double tol = 1e-10;   // relative change of the function-of-matrix action
    bool reorth = true;

    void validate() const {
        if (max_iter < 1) throw std::invalid_argument("LanczosConfig: max_iter must be >= 1");
        if (!(tol > 0.0)) throw std::invalid_argument("LanczosConfig: tol must be positive");
    }
};

struct LanczosResult {
    Vector value;
    bool converged = false;
    Index iterations = 0;
};

// State of the generalized Golub-Kahan process for
//   gamma_1 u_1 = b - A mu,            alpha_1 v_1 = A^T R^{-1} u_1,
//   gamma_{i+1} u_{i+1} = A Q v_i - alpha_i u_i,
//   alpha_{i+1} v_{i+1} = A^T R^{-1} u_{i+1} - gamma_{i+1} v_i,
// with u's normalized in the R^{-1} inner product and v's in the Q inner
// product.  After k steps U has k+1 columns and V has k+1 columns (the extra
// v_{k+1} feeds the preconditioned acceptance ratio).  alpha[i] is alpha_{i+1}
// and gamma[i] is gamma_{i+1}; gamma[0] = ||b - A mu||_{R^{-1}}.
//
// The state is independent of (lambda, delta) and is computed once per model,
// then shared read-only by all chains.
struct GenGKState {
    OperatorPtr A;
    CovariancePtr R;
    CovariancePtr Q;
    Vector b;
    Vector mu;
    Vector b0;  // b - A mu

    Index k = 0;            // achieved rank
    bool breakdown = false; // truncated before the requested rank (or at saturation)
    Matrix U;               // m x (k+1)
    Matrix V;               // n x (k+1); column k is v_{k+1} (zero after breakdown)
    Matrix QV;              // Q V, cached
    Vector alpha;           // k+1 entries
    Vector gamma;           // k+1 entries

    Index m() const { return A->rows(); }
    Index n() const { return A->cols(); }

    Eigen::Block<const Matrix, Eigen::Dynamic, Eigen::Dynamic, true> Vk() const { return V.leftCols(k); }
    Eigen::Block<const Matrix, Eigen::Dynamic, Eigen::Dynamic, true> QVk() const { return QV.leftCols(k); }

    // The (k+1) x k bidiagonal with alpha on the diagonal and gamma below it.
    Matrix bidiagonal() const {
        Matrix B = Matrix::Zero(k + 1, k);
        for (Index i = 0; i < k; ++i) {
            B(i, i) = alpha[i];
            B(i + 1, i) = gamma[i + 1];
        }
        return B;
    }
};

GenGKState gengk_bidiagonalize(OperatorPtr A, CovariancePtr R, CovariancePtr Q, Vector b, Vector mu,
                               Index k, bool reorth = true);

// argmin_z lambda ||B_k z - gamma_1 e_1||^2 + delta ||z||^2 via Householder QR
// of the stacked (2k+1) x k system.
Vector projected_tikhonov_solve(const GenGKState& state, double lambda, double delta);

// x_k = mu + Q V_k z_k.
Vector gengk_solution(const GenGKState& state, const Vector& z);

// w ~= Q^{1/2} v via Lanczos started from v/||v||: w_m = ||v|| V_m T_m^{1/2} e_1.
LanczosResult lanczos_sqrt_apply(const CovarianceOperator& Q, const Vector& v, const LanczosConfig& cfg);

// w ~= (G F G^T)^{-1/2} xi via Lanczos on the preconditioned operator.
LanczosResult precond_inv_sqrt_apply(const LinearOperator& G, const LinearOperator& F, const Vector& xi,
                                     const LanczosConfig& cfg);

// Shared building block for the two above (f is sqrt or inverse sqrt of the
// projected tridiagonal).
LanczosResult lanczos_function_apply(const std::function<Vector(const Vector&)>& op_apply, Index dim,
                                     const Vector& v, const LanczosConfig& cfg, bool inverse_sqrt);

// How Q^{1/2} actions are produced: exact dense square roots below the
// threshold, Lanczos above it.
struct SqrtPolicy {
    enum class Mode { Auto, ExactDense, Lanczos };
    Mode mode = Mode::Auto;
    Index dense_threshold = 2000;
    LanczosConfig lanczos;

    Vector apply(const CovarianceOperator& Q, const Vector& v, bool* converged = nullptr) const;
};

// Low-rank representation Z Theta Z^T = Q^{1/2} V_k B_k^T B_k V_k^T Q^{1/2}
// obtained from QR factorizations of B_k and Q^{1/2} V_k (R^(1))^T followed by
// a k x k eigendecomposition.
struct LowRankSqrtFactors {
    Matrix Z;      // n x k, orthonormal
    Vector theta;  // k, sorted non-increasing, clamped at zero
    bool sqrt_converged = true;

    // Diagonal of D_k = I - (I + (lambda/delta) Theta)^{-1/2}.
    Vector dk(double lambda, double delta) const;
};

LowRankSqrtFactors lowrank_sqrt_factors(const GenGKState& state, const SqrtPolicy& policy = {});

Vector dk_matrix(const Vector& theta, double lambda, double delta);

// Checkpoint the factorization as a directory of Matrix Market files
// (U, V, alpha, gamma); loading recomputes the cached Q V columns.
void save_gengk_state(const GenGKState& state, const std::filesystem::path& dir);
GenGKState load_gengk_state(const std::filesystem::path& dir, OperatorPtr A, CovariancePtr R,
                            CovariancePtr Q, Vector b, Vector mu);

}  // namespace gkmcmc
