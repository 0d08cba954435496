#include <doctest.h>

#include <gkmcmc/krylov.hpp>

#include <filesystem>

#include "test_util.hpp"

using namespace gkmcmc;
using testutil::random_matrix;
using testutil::random_vector;
using testutil::random_spd;

namespace {

struct Fixture {
    OperatorPtr A;
    CovariancePtr R, Q;
    Vector b, mu;
    Matrix a_dense, r_dense, q_dense;
};

Fixture make_fixture(Index m, Index n, RngStream& rng, bool zero_mu = false) {
    Fixture f;
    f.a_dense = random_matrix(m, n, rng);
    f.A = std::make_shared<DenseOperator>(f.a_dense);
    Vector rdiag(m);
    for (Index i = 0; i < m; ++i) rdiag[i] = 0.5 + rng.uniform();
    f.r_dense = Matrix(rdiag.asDiagonal());
    f.R = std::make_shared<DiagonalCovariance>(rdiag);
    f.q_dense = random_spd(n, rng);
    f.Q = std::make_shared<DenseSpdCovariance>(f.q_dense);
    f.b = random_vector(m, rng);
    f.mu = zero_mu ? Vector::Zero(n) : random_vector(n, rng);
    return f;
}

// General-form Tikhonov solution from the dense normal equations.
Vector dense_tikhonov(const Fixture& f, double lambda, double delta) {
    const Matrix rinv = f.r_dense.inverse();
    const Matrix qinv = f.q_dense.inverse();
    const Matrix lhs = lambda * f.a_dense.transpose() * rinv * f.a_dense + delta * qinv;
    const Vector rhs = lambda * f.a_dense.transpose() * rinv * f.b + delta * qinv * f.mu;
    return lhs.ldlt().solve(rhs);
}

}  // namespace

TEST_CASE("gengk identity fixture") {
    // A = Q = R = I, mu = 0: u_1 = b / ||b||, alpha_1 = 1, v_1 = u_1
    const Index n = 6;
    auto eye_op = std::make_shared<ScaledIdentityCovariance>(n, 1.0);
    RngStream rng(1);
    const Vector b = random_vector(n, rng);
    auto st = gengk_bidiagonalize(eye_op, eye_op, eye_op, b, Vector::Zero(n), 3);
    CHECK((st.U.col(0) - b / b.norm()).norm() <= 1e-14);
    CHECK(st.alpha[0] == doctest::Approx(1.0));
    CHECK((st.V.col(0) - st.U.col(0)).norm() <= 1e-14);
    // the identity Krylov space is one-dimensional, so the process truncates
    CHECK(st.breakdown);
    CHECK(st.k == 1);
}

TEST_CASE("gengk relations and weighted orthonormality") {
    RngStream rng(2);
    auto f = make_fixture(12, 8, rng);
    auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 6);
    REQUIRE(st.k == 6);
    REQUIRE_FALSE(st.breakdown);
    const Matrix B = st.bidiagonal();
    const Matrix rinv = f.r_dense.inverse();

    // U^T R^{-1} U = I and V^T Q V = I (all stored columns are live here)
    const Matrix gu = st.U.transpose() * rinv * st.U;
    CHECK((gu - Matrix::Identity(st.k + 1, st.k + 1)).norm() <= 1e-8);
    const Matrix gv = st.V.transpose() * f.q_dense * st.V;
    CHECK((gv - Matrix::Identity(st.k + 1, st.k + 1)).norm() <= 1e-8);

    // A Q V_k = U_{k+1} B_k
    const Matrix lhs1 = f.a_dense * f.q_dense * st.Vk();
    CHECK((lhs1 - st.U * B).norm() <= 1e-8 * B.norm());

    // A^T R^{-1} U_{k+1} = V_k B_k^T + alpha_{k+1} v_{k+1} e_{k+1}^T
    Matrix rhs2 = st.Vk() * B.transpose();
    rhs2.col(st.k) += st.alpha[st.k] * st.V.col(st.k);
    CHECK((f.a_dense.transpose() * rinv * st.U - rhs2).norm() <= 1e-8 * B.norm());

    // gamma_1 equals the weighted initial residual norm
    const Vector b0 = f.b - f.a_dense * f.mu;
    CHECK(st.gamma[0] == doctest::Approx(std::sqrt(b0.dot(rinv * b0))));
}

TEST_CASE("gengk saturation at full rank flags breakdown") {
    RngStream rng(20);
    auto f = make_fixture(12, 8, rng);
    auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 8);
    CHECK(st.k == 8);
    CHECK(st.breakdown);
    // the live V_k columns stay Q-orthonormal; the saturated tail column is zero
    const Matrix gv = st.Vk().transpose() * f.q_dense * st.Vk();
    CHECK((gv - Matrix::Identity(8, 8)).norm() <= 1e-8);
    CHECK(st.V.col(8).norm() == 0.0);
    // asking beyond min(m, n) truncates the same way
    auto more = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 30);
    CHECK(more.k <= 8);
}

TEST_CASE("gengk zero initial residual errors") {
    RngStream rng(3);
    auto f = make_fixture(10, 7, rng);
    const Vector b = f.a_dense * f.mu;  // b == A mu
    CHECK_THROWS_AS(gengk_bidiagonalize(f.A, f.R, f.Q, b, f.mu, 3), std::invalid_argument);
}

TEST_CASE("projected tikhonov solve") {
    RngStream rng(4);
    auto f = make_fixture(20, 15, rng);

    SUBCASE("k = 1 closed form") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 1);
        const double lambda = 2.0, delta = 0.7;
        const Vector z = projected_tikhonov_solve(st, lambda, delta);
        const double a1 = st.alpha[0], g1 = st.gamma[0], g2 = st.gamma[1];
        const double expected = lambda * a1 * g1 / (lambda * (a1 * a1 + g2 * g2) + delta);
        CHECK(z[0] == doctest::Approx(expected));
        // x_k = mu + Q V_k z matches the dense evaluation
        const Vector xk = gengk_solution(st, z);
        CHECK((xk - (f.mu + f.q_dense * st.Vk() * z)).norm() <= 1e-12 * xk.norm());
    }

    SUBCASE("shrinkage to zero as delta grows") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 6);
        double prev = std::numeric_limits<double>::infinity();
        for (double delta : {1e2, 1e4, 1e6}) {
            const double norm = projected_tikhonov_solve(st, 1.0, delta).norm();
            CHECK(norm < prev);
            prev = norm;
        }
    }

    SUBCASE("full rank matches dense general-form Tikhonov") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 15);
        REQUIRE(st.k == 15);
        const double lambda = 1.3, delta = 0.4;
        const Vector xk = gengk_solution(st, projected_tikhonov_solve(st, lambda, delta));
        const Vector xd = dense_tikhonov(f, lambda, delta);
        CHECK((xk - xd).norm() <= 1e-8 * xd.norm());
    }

    SUBCASE("z = 0 returns the prior mean") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 4);
        CHECK((gengk_solution(st, Vector::Zero(4)) - f.mu).norm() == 0.0);
    }
}

TEST_CASE("monotone projected data fit in k") {
    RngStream rng(5);
    auto f = make_fixture(18, 12, rng);
    auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 12);
    const double lambda = 2.0, delta = 0.3;
    const Matrix bfull = st.bidiagonal();
    double prev = std::numeric_limits<double>::infinity();
    for (Index k = 1; k <= st.k; ++k) {
        GenGKState sub = st;
        sub.k = k;
        sub.U = st.U.leftCols(k + 1);
        sub.V = st.V.leftCols(k + 1);
        sub.QV = st.QV.leftCols(k + 1);
        sub.alpha = st.alpha.head(k + 1);
        sub.gamma = st.gamma.head(k + 1);
        const Vector z = projected_tikhonov_solve(sub, lambda, delta);
        Vector r = -sub.gamma[0] * Vector::Unit(k + 1, 0);
        r += sub.bidiagonal() * z;
        const double fit = lambda * r.squaredNorm();
        CHECK(fit <= prev + 1e-10);
        prev = fit;
    }
}

TEST_CASE("lanczos square root applications") {
    RngStream rng(6);

    SUBCASE("scaled identity") {
        ScaledIdentityCovariance q(9, 4.0);
        const Vector v = random_vector(9, rng);
        auto res = lanczos_sqrt_apply(q, v, {});
        CHECK(res.converged);
        CHECK((res.value - 2.0 * v).norm() <= 1e-10 * v.norm());
    }

    SUBCASE("diagonal eigenbasis") {
        Vector d(3);
        d << 1, 4, 9;
        DiagonalCovariance q(d);
        Vector v = Vector::Ones(3);
        auto res = lanczos_sqrt_apply(q, v, {});
        Vector expected(3);
        expected << 1, 2, 3;
        CHECK((res.value - expected).norm() <= 1e-10);
    }

    SUBCASE("random SPD against the dense square root") {
        const Matrix q = random_spd(30, rng);
        DenseSpdCovariance qop(q);
        const Vector v = random_vector(30, rng);
        const Vector exact = testutil::dense_sqrt(q) * v;
        auto res = lanczos_sqrt_apply(qop, v, {200, 1e-12, true});
        CHECK(res.converged);
        CHECK((res.value - exact).norm() <= 1e-8 * exact.norm());
    }

    SUBCASE("exact in d iterations for d distinct eigenvalues") {
        Vector d(12);
        for (Index i = 0; i < 12; ++i) d[i] = (i % 3 == 0) ? 1.0 : (i % 3 == 1 ? 2.5 : 7.0);
        DiagonalCovariance q(d);
        const Vector v = random_vector(12, rng);
        auto res = lanczos_sqrt_apply(q, v, {200, 1e-12, true});
        CHECK(res.iterations <= 4);  // 3 distinct eigenvalues + the convergence probe
        CHECK((res.value - d.cwiseSqrt().cwiseProduct(v)).norm() <= 1e-10 * v.norm());
    }

    SUBCASE("non-convergence is flagged, zero start vector rejected") {
        const Matrix q = random_spd(40, rng);
        DenseSpdCovariance qop(q);
        const Vector v = random_vector(40, rng);
        auto res = lanczos_sqrt_apply(qop, v, {2, 1e-14, true});
        CHECK_FALSE(res.converged);
        CHECK_THROWS_AS(lanczos_sqrt_apply(qop, Vector::Zero(40), {}), std::invalid_argument);
    }
}

TEST_CASE("preconditioned inverse square root") {
    RngStream rng(7);

    SUBCASE("scaled identity sandwich") {
        auto c_op = std::make_shared<ScaledIdentityCovariance>(8, 9.0);
        ScaledIdentityCovariance g(8, 1.0);
        const Vector xi = random_vector(8, rng);
        auto res = precond_inv_sqrt_apply(g, *c_op, xi, {});
        CHECK((res.value - xi / 3.0).norm() <= 1e-10 * xi.norm());
    }

    SUBCASE("identity preconditioner, diagonal F") {
        Vector d(5);
        d << 1, 2, 3, 4, 5;
        DiagonalCovariance f(d);
        ScaledIdentityCovariance g(5, 1.0);
        const Vector xi = random_vector(5, rng);
        auto res = precond_inv_sqrt_apply(g, f, xi, {});
        CHECK((res.value - xi.cwiseQuotient(d.cwiseSqrt())).norm() <= 1e-9 * xi.norm());
    }

    SUBCASE("matches the dense eigendecomposition oracle") {
        const Matrix fm = random_spd(25, rng);
        DenseSpdCovariance f(fm);
        // G from a triangular factorization of an F-inverse approximant
        Matrix fa = fm + 0.05 * random_spd(25, rng);
        const Matrix l = Eigen::LLT<Matrix>(fa).matrixL();
        const Matrix gm = l.transpose().triangularView<Eigen::Upper>().solve(Matrix::Identity(25, 25));
        DenseOperator g(gm);
        const Vector xi = random_vector(25, rng);
        const Matrix gfgt = gm * fm * gm.transpose();
        const Vector exact = testutil::dense_inv_sqrt(gfgt) * xi;
        auto res = precond_inv_sqrt_apply(g, f, xi, {200, 1e-12, true});
        CHECK(res.converged);
        CHECK((res.value - exact).norm() <= 1e-7 * exact.norm());
    }
}

TEST_CASE("low-rank square-root factors") {
    RngStream rng(8);
    auto f = make_fixture(14, 10, rng, true);

    SUBCASE("orthonormal Z and the defining identity") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 5);
        auto fx = lowrank_sqrt_factors(st);
        CHECK((fx.Z.transpose() * fx.Z - Matrix::Identity(5, 5)).norm() <= 1e-10);
        for (Index i = 0; i + 1 < 5; ++i) CHECK(fx.theta[i] >= fx.theta[i + 1]);
        CHECK(fx.theta.minCoeff() >= 0.0);

        const Matrix qh = testutil::dense_sqrt(f.q_dense);
        const Matrix B = st.bidiagonal();
        const Matrix target = qh * st.Vk() * B.transpose() * B * st.Vk().transpose() * qh;
        const Matrix zthz = fx.Z * fx.theta.asDiagonal() * fx.Z.transpose();
        CHECK((zthz - target).norm() <= 1e-8 * target.norm());
    }

    SUBCASE("full rank reproduces the prior-preconditioned Hessian") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 10);
        REQUIRE(st.k == 10);
        auto fx = lowrank_sqrt_factors(st);
        const Matrix qh = testutil::dense_sqrt(f.q_dense);
        const Matrix target =
            qh * f.a_dense.transpose() * f.r_dense.inverse() * f.a_dense * qh;
        const Matrix zthz = fx.Z * fx.theta.asDiagonal() * fx.Z.transpose();
        CHECK((zthz - target).norm() <= 1e-8 * target.norm());
    }

    SUBCASE("Lanczos square-root policy agrees with the exact dense path") {
        auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 6);
        SqrtPolicy lanczos_policy;
        lanczos_policy.mode = SqrtPolicy::Mode::Lanczos;
        lanczos_policy.lanczos = {200, 1e-12, true};
        auto fx_exact = lowrank_sqrt_factors(st);
        auto fx_lanczos = lowrank_sqrt_factors(st, lanczos_policy);
        CHECK(fx_lanczos.sqrt_converged);
        CHECK((fx_exact.theta - fx_lanczos.theta).norm() <= 1e-7 * (1.0 + fx_exact.theta.norm()));
    }
}

TEST_CASE("theta closed form at k = 1") {
    RngStream rng(9);
    auto f = make_fixture(9, 6, rng, true);
    auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 1);
    auto fx = lowrank_sqrt_factors(st);
    // Z Theta Z^T = Q^{1/2} v_1 (alpha_1^2 + gamma_2^2) v_1^T Q^{1/2}, so the
    // single eigenvalue is (alpha_1^2 + gamma_2^2) ||Q^{1/2} v_1||^2.
    const Matrix qh = testutil::dense_sqrt(f.q_dense);
    const double scale = (qh * st.V.col(0)).squaredNorm();
    const double expected = (st.alpha[0] * st.alpha[0] + st.gamma[1] * st.gamma[1]) * scale;
    CHECK(fx.theta[0] == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("dk matrix closed forms and Woodbury consistency") {
    CHECK(dk_matrix(Vector::Zero(4), 1.0, 1.0).norm() == 0.0);

    Vector theta(1);
    theta << 3.0;
    CHECK(dk_matrix(theta, 1.0, 1.0)[0] == doctest::Approx(0.5));

    RngStream rng(10);
    const Index n = 20, k = 6;
    // random orthonormal Z via QR
    Eigen::HouseholderQR<Matrix> qr(random_matrix(n, k, rng));
    const Matrix z = qr.householderQ() * Matrix::Identity(n, k);
    Vector th(k);
    for (Index i = 0; i < k; ++i) th[i] = rng.uniform() * 5.0;
    const double lambda = 1.7, delta = 0.6;
    const Vector d = dk_matrix(th, lambda, delta);
    CHECK((d.array() >= 0.0).all());
    CHECK((d.array() < 1.0).all());

    // delta^{-1} (I - Z D Z^T)^2 = (lambda Z Theta Z^T + delta I)^{-1}
    const Matrix izdz = Matrix::Identity(n, n) - z * d.asDiagonal() * z.transpose();
    const Matrix lhs = izdz * izdz / delta;
    const Matrix rhs = (lambda * z * th.asDiagonal() * z.transpose() +
                        delta * Matrix::Identity(n, n)).inverse();
    CHECK((lhs - rhs).norm() <= 1e-10 * rhs.norm());
}

TEST_CASE("approximate covariance square root consistency") {
    // dense Gamma_hat^{1/2} (Gamma_hat^{1/2})^T = Q^{1/2}(lambda Z Theta Z^T + delta I)^{-1} Q^{1/2}
    RngStream rng(11);
    auto f = make_fixture(16, 12, rng, true);
    auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 7);
    auto fx = lowrank_sqrt_factors(st);
    const double lambda = 2.2, delta = 0.9;
    const Vector d = fx.dk(lambda, delta);
    const Matrix qh = testutil::dense_sqrt(f.q_dense);
    const Index n = 12;
    const Matrix half =
        (qh * (Matrix::Identity(n, n) - fx.Z * d.asDiagonal() * fx.Z.transpose())) / std::sqrt(delta);
    const Matrix lhs = half * half.transpose();
    const Matrix rhs = qh *
                       (lambda * fx.Z * fx.theta.asDiagonal() * fx.Z.transpose() +
                        delta * Matrix::Identity(n, n)).inverse() *
                       qh;
    CHECK((lhs - rhs).norm() <= 1e-8 * rhs.norm());
}

TEST_CASE("state export and import round trip") {
    RngStream rng(12);
    auto f = make_fixture(11, 8, rng);
    auto st = gengk_bidiagonalize(f.A, f.R, f.Q, f.b, f.mu, 5);
    const auto dir = std::filesystem::temp_directory_path() / "gkmcmc_state_test";
    save_gengk_state(st, dir);
    auto back = load_gengk_state(dir, f.A, f.R, f.Q, f.b, f.mu);
    CHECK(back.k == st.k);
    CHECK((back.U - st.U).norm() == 0.0);
    CHECK((back.V - st.V).norm() == 0.0);
    CHECK((back.alpha - st.alpha).norm() == 0.0);
    CHECK((back.gamma - st.gamma).norm() == 0.0);
    CHECK((back.QV - st.QV).norm() <= 1e-12 * st.QV.norm());

    // wrong model is refused
    Vector other_b = f.b;
    other_b[0] += 10.0;
    CHECK_THROWS_AS(load_gengk_state(dir, f.A, f.R, f.Q, other_b, f.mu), ConfigError);
    std::filesystem::remove_all(dir);
}
