#include "gkmcmc/krylov.hpp"

#include <Eigen/QR>

#include <cmath>

#include "gkmcmc/mmio.hpp"

namespace gkmcmc {

namespace {

constexpr double kBreakdownFactor = 1e-14;

double weighted_norm(const Vector& v, const Vector& weighted_v) {
    return std::sqrt(std::max(0.0, v.dot(weighted_v)));
}

}  // namespace

GenGKState gengk_bidiagonalize(OperatorPtr A, CovariancePtr R, CovariancePtr Q, Vector b, Vector mu,
                               Index k, bool reorth) {
    if (!A || !R || !Q) throw std::invalid_argument("gengk_bidiagonalize: null operator");
    if (!R->has_solve()) throw std::invalid_argument("gengk_bidiagonalize: R must provide an exact inverse");
    const Index m = A->rows(), n = A->cols();
    if (R->dim() != m || Q->dim() != n || b.size() != m || mu.size() != n)
        throw std::invalid_argument("gengk_bidiagonalize: inconsistent dimensions");
    if (k < 1) throw std::invalid_argument("gengk_bidiagonalize: k must be >= 1");
    k = std::min(k, std::min(m, n));

    GenGKState st;
    st.A = std::move(A);
    st.R = std::move(R);
    st.Q = std::move(Q);
    st.b = std::move(b);
    st.mu = std::move(mu);
    st.b0 = st.b - st.A->apply(st.mu);

    st.U.setZero(m, k + 1);
    st.V.setZero(n, k + 1);
    st.QV.setZero(n, k + 1);
    st.alpha.setZero(k + 1);
    st.gamma.setZero(k + 1);
    Matrix RinvU = Matrix::Zero(m, k + 1);

    Vector rb = st.R->solve(st.b0);
    const double gamma1 = weighted_norm(st.b0, rb);
    if (!(gamma1 > 0.0))
        throw std::invalid_argument("gengk_bidiagonalize: zero initial residual (b equals A mu)");
    const double breakdown_tol = kBreakdownFactor * gamma1;

    st.gamma[0] = gamma1;
    st.U.col(0) = st.b0 / gamma1;
    RinvU.col(0) = rb / gamma1;

    Vector s = st.A->apply_transpose(RinvU.col(0));
    Vector qs = st.Q->apply(s);
    const double alpha1 = weighted_norm(s, qs);
    if (alpha1 <= breakdown_tol)
        throw NumericError("gengk_bidiagonalize: A^T R^{-1} u_1 vanished, no Krylov space");
    st.alpha[0] = alpha1;
    st.V.col(0) = s / alpha1;
    st.QV.col(0) = qs / alpha1;

    Index achieved = k;
    for (Index j = 1; j <= k; ++j) {
        // Next u: gamma_{j+1} u_{j+1} = A Q v_j - alpha_j u_j.
        Vector w = st.A->apply(st.QV.col(j - 1)) - st.alpha[j - 1] * st.U.col(j - 1);
        Vector rw = st.R->solve(w);
        if (reorth) {
            for (int pass = 0; pass < 2; ++pass) {
                const Vector c = RinvU.leftCols(j).transpose() * w;
                w.noalias() -= st.U.leftCols(j) * c;
                rw.noalias() -= RinvU.leftCols(j) * c;
            }
        }
        const double g = weighted_norm(w, rw);
        st.gamma[j] = g;
        if (g <= breakdown_tol) {
            achieved = j;
            st.breakdown = true;
            break;
        }
        st.U.col(j) = w / g;
        RinvU.col(j) = rw / g;

        // Next v: alpha_{j+1} v_{j+1} = A^T R^{-1} u_{j+1} - gamma_{j+1} v_j.
        s = st.A->apply_transpose(RinvU.col(j)) - g * st.V.col(j - 1);
        if (reorth) {
            for (int pass = 0; pass < 2; ++pass) {
                const Vector c = st.QV.leftCols(j).transpose() * s;
                s.noalias() -= st.V.leftCols(j) * c;
            }
        }
        qs = st.Q->apply(s);
        const double a = weighted_norm(s, qs);
        st.alpha[j] = a;
        if (a <= breakdown_tol) {
            achieved = j;
            st.breakdown = true;
            break;
        }
        st.V.col(j) = s / a;
        st.QV.col(j) = qs / a;
    }

    if (achieved < k) {
        st.U.conservativeResize(Eigen::NoChange, achieved + 1);
        st.V.conservativeResize(Eigen::NoChange, achieved + 1);
        st.QV.conservativeResize(Eigen::NoChange, achieved + 1);
        st.alpha.conservativeResize(achieved + 1);
        st.gamma.conservativeResize(achieved + 1);
    }
    st.k = achieved;
    return st;
}

Vector projected_tikhonov_solve(const GenGKState& state, double lambda, double delta) {
    if (!(lambda > 0.0) || !(delta > 0.0))
        throw std::invalid_argument("projected_tikhonov_solve: lambda and delta must be positive");
    if (state.k < 1) throw std::invalid_argument("projected_tikhonov_solve: empty state");
    const Index k = state.k;
    const double sl = std::sqrt(lambda), sd = std::sqrt(delta);
    Matrix S = Matrix::Zero(2 * k + 1, k);
    for (Index i = 0; i < k; ++i) {
        S(i, i) = sl * state.alpha[i];
        S(i + 1, i) = sl * state.gamma[i + 1];
        S(k + 1 + i, i) = sd;
    }
    Vector rhs = Vector::Zero(2 * k + 1);
    rhs[0] = sl * state.gamma[0];
    return S.householderQr().solve(rhs);
}

Vector gengk_solution(const GenGKState& state, const Vector& z) {
    if (z.size() != state.k) throw std::invalid_argument("gengk_solution: coefficient size mismatch");
    return state.mu + state.QVk() * z;
}

LanczosResult lanczos_function_apply(const std::function<Vector(const Vector&)>& op_apply, Index dim,
                                     const Vector& v, const LanczosConfig& cfg, bool inverse_sqrt) {
    cfg.validate();
    if (v.size() != dim) throw std::invalid_argument("lanczos_function_apply: dimension mismatch");
    const double beta0 = v.norm();
    if (!(beta0 > 0.0)) throw std::invalid_argument("lanczos_function_apply: zero start vector");

    const Index cap = std::min(cfg.max_iter, dim);
    Matrix basis(dim, cap);
    basis.col(0) = v / beta0;
    Vector diag(cap), offdiag(cap);
    LanczosResult res;
    Vector prev;

    Index j = 0;
    for (; j < cap; ++j) {
        Vector w = op_apply(basis.col(j));
        if (j > 0) w.noalias() -= offdiag[j - 1] * basis.col(j - 1);
        diag[j] = basis.col(j).dot(w);
        w.noalias() -= diag[j] * basis.col(j);
        if (cfg.reorth) {
            const Vector c = basis.leftCols(j + 1).transpose() * w;
            w.noalias() -= basis.leftCols(j + 1) * c;
        }
        offdiag[j] = w.norm();

        // Evaluate f(T_{j+1}) e_1 through the small eigendecomposition.
        Matrix t = Matrix::Zero(j + 1, j + 1);
        for (Index i = 0; i <= j; ++i) {
            t(i, i) = diag[i];
            if (i < j) {
                t(i, i + 1) = offdiag[i];
                t(i + 1, i) = offdiag[i];
            }
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(t);
        Vector ev = es.eigenvalues();
        if (inverse_sqrt) {
            if (ev.minCoeff() <= 0.0)
                throw NumericError("lanczos_function_apply: projected operator not positive definite");
            ev = ev.array().rsqrt();
        } else {
            ev = ev.cwiseMax(0.0).cwiseSqrt();
        }
        const Vector y = es.eigenvectors() * ev.cwiseProduct(es.eigenvectors().row(0).transpose()) * beta0;
        res.value = basis.leftCols(j + 1) * y;
        res.iterations = j + 1;

        if (prev.size() > 0 && (res.value - prev).norm() <= cfg.tol * res.value.norm()) {
            res.converged = true;
            break;
        }
        prev = res.value;

        if (offdiag[j] <= 1e-14 * beta0) {
            // Invariant subspace reached: the action is exact.
            res.converged = true;
            break;
        }
        if (j + 1 < cap) basis.col(j + 1) = w / offdiag[j];
    }
    return res;
}

LanczosResult lanczos_sqrt_apply(const CovarianceOperator& Q, const Vector& v, const LanczosConfig& cfg) {
    return lanczos_function_apply([&Q](const Vector& x) { return Q.apply(x); }, Q.dim(), v, cfg, false);
}

LanczosResult precond_inv_sqrt_apply(const LinearOperator& G, const LinearOperator& F, const Vector& xi,
                                     const LanczosConfig& cfg) {
    if (G.rows() != G.cols() || F.rows() != F.cols() || G.rows() != F.rows())
        throw std::invalid_argument("precond_inv_sqrt_apply: G and F must be square and conformal");
    auto op = [&](const Vector& x) { return G.apply(F.apply(G.apply_transpose(x))); };
    return lanczos_function_apply(op, G.rows(), xi, cfg, true);
}

Vector SqrtPolicy::apply(const CovarianceOperator& Q, const Vector& v, bool* converged) const {
    const bool exact = mode == Mode::ExactDense ||
                       (mode == Mode::Auto && Q.has_sqrt() && Q.dim() <= dense_threshold);
    if (exact) {
        if (!Q.has_sqrt())
            throw std::invalid_argument("SqrtPolicy: exact square root requested but not available");
        if (converged) *converged = true;
        return Q.sqrt_apply(v);
    }
    if (v.norm() == 0.0) {
        if (converged) *converged = true;
        return Vector::Zero(v.size());
    }
    auto res = lanczos_sqrt_apply(Q, v, lanczos);
    if (converged) *converged = res.converged;
    return std::move(res.value);
}

Vector dk_matrix(const Vector& theta, double lambda, double delta) {
    if (!(lambda > 0.0) || !(delta > 0.0))
        throw std::invalid_argument("dk_matrix: lambda and delta must be positive");
    if ((theta.array() < 0.0).any()) throw std::invalid_argument("dk_matrix: theta must be nonnegative");
    return 1.0 - (1.0 + (lambda / delta) * theta.array()).rsqrt();
}

Vector LowRankSqrtFactors::dk(double lambda, double delta) const { return dk_matrix(theta, lambda, delta); }

LowRankSqrtFactors lowrank_sqrt_factors(const GenGKState& state, const SqrtPolicy& policy) {
    const Index k = state.k, n = state.n();
    const Matrix B = state.bidiagonal();

    // B_k = Q^(1) R^(1)
    Eigen::HouseholderQR<Matrix> qr1(B);
    const Matrix R1 = qr1.matrixQR().topRows(k).triangularView<Eigen::Upper>();

    // Q^(2) R^(2) = Q^{1/2} V_k (R^(1))^T
    LowRankSqrtFactors out;
    Matrix M(n, k);
    const Matrix VRt = state.Vk() * R1.transpose();
    for (Index j = 0; j < k; ++j) {
        bool ok = true;
        M.col(j) = policy.apply(*state.Q, VRt.col(j), &ok);
        out.sqrt_converged = out.sqrt_converged && ok;
    }

    Eigen::HouseholderQR<Matrix> qr2(M);
    const Matrix Q2 = qr2.householderQ() * Matrix::Identity(n, k);
    const Matrix R2 = qr2.matrixQR().topRows(k).triangularView<Eigen::Upper>();

    // R^(2) (R^(2))^T = W Theta W^T, Z = Q^(2) W, eigenvalues sorted descending.
    Eigen::SelfAdjointEigenSolver<Matrix> es(R2 * R2.transpose());
    out.Z = Matrix(n, k);
    out.theta = Vector(k);
    for (Index i = 0; i < k; ++i) {
        out.theta[i] = es.eigenvalues()[k - 1 - i];
        out.Z.col(i) = Q2 * es.eigenvectors().col(k - 1 - i);
    }
    const double clamp = kBreakdownFactor * std::max(0.0, out.theta.maxCoeff());
    out.theta = (out.theta.array() < clamp).select(0.0, out.theta);
    return out;
}

void save_gengk_state(const GenGKState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    mmio::write_array(dir / "U.mtx", state.U);
    mmio::write_array(dir / "V.mtx", state.V);
    mmio::write_array(dir / "alpha.mtx", state.alpha);
    mmio::write_array(dir / "gamma.mtx", state.gamma);
}

GenGKState load_gengk_state(const std::filesystem::path& dir, OperatorPtr A, CovariancePtr R,
                            CovariancePtr Q, Vector b, Vector mu) {
    GenGKState st;
    st.U = mmio::read_array(dir / "U.mtx");
    st.V = mmio::read_array(dir / "V.mtx");
    st.alpha = mmio::read_array(dir / "alpha.mtx");
    st.gamma = mmio::read_array(dir / "gamma.mtx");
    st.A = std::move(A);
    st.R = std::move(R);
    st.Q = std::move(Q);
    st.b = std::move(b);
    st.mu = std::move(mu);

    const Index cols = st.U.cols();
    if (cols < 2 || st.V.cols() != cols || st.alpha.size() != cols || st.gamma.size() != cols)
        throw ConfigError("load_gengk_state: inconsistent factor dimensions in " + dir.string());
    if (st.U.rows() != st.A->rows() || st.V.rows() != st.A->cols())
        throw ConfigError("load_gengk_state: state does not match the supplied operators");
    st.k = cols - 1;
    st.breakdown = st.alpha[st.k] == 0.0 || st.V.col(st.k).norm() == 0.0;
    st.b0 = st.b - st.A->apply(st.mu);
    const Vector rb = st.R->solve(st.b0);
    const double gamma1 = std::sqrt(std::max(0.0, st.b0.dot(rb)));
    if (std::abs(gamma1 - st.gamma[0]) > 1e-6 * std::max(1.0, gamma1))
        throw ConfigError("load_gengk_state: stored gamma_1 disagrees with b - A mu");
    st.QV.resize(st.V.rows(), cols);
    for (Index j = 0; j < cols; ++j) st.QV.col(j) = st.Q->apply(st.V.col(j));
    return st;
}

}  // namespace gkmcmc
