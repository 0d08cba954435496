#include "gkmcmc/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "gkmcmc/mmio.hpp"

namespace gkmcmc {

namespace {

struct Point {
    double x, y;
};

// Pixel intersection lengths of the segment p0 -> p1 against the unit-pixel
// grid [0,nx]^2, Siddon style: collect the crossing parameters with every grid
// line, then walk the sorted intervals.
void trace_ray(Index nx, Point p0, Point p1, std::vector<Eigen::Triplet<double>>& out, Index row) {
    const double dx = p1.x - p0.x, dy = p1.y - p0.y;
    const double seg_len = std::hypot(dx, dy);
    if (seg_len == 0.0) return;

    double tmin = 0.0, tmax = 1.0;
    auto clip = [&](double p, double d) {
        if (std::abs(d) < 1e-14) return p >= 0.0 && p <= static_cast<double>(nx);
        double t0 = (0.0 - p) / d, t1 = (static_cast<double>(nx) - p) / d;
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        return true;
    };
    if (!clip(p0.x, dx) || !clip(p0.y, dy) || tmin >= tmax) return;

    std::vector<double> ts;
    ts.push_back(tmin);
    ts.push_back(tmax);
    if (std::abs(dx) > 1e-14)
        for (Index g = 0; g <= nx; ++g) {
            const double t = (static_cast<double>(g) - p0.x) / dx;
            if (t > tmin && t < tmax) ts.push_back(t);
        }
    if (std::abs(dy) > 1e-14)
        for (Index g = 0; g <= nx; ++g) {
            const double t = (static_cast<double>(g) - p0.y) / dy;
            if (t > tmin && t < tmax) ts.push_back(t);
        }
    std::sort(ts.begin(), ts.end());

    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const double ta = ts[i], tb = ts[i + 1];
        if (tb - ta < 1e-12) continue;
        const double tm = 0.5 * (ta + tb);
        const auto ix = static_cast<Index>(std::floor(p0.x + tm * dx));
        const auto iy = static_cast<Index>(std::floor(p0.y + tm * dy));
        if (ix < 0 || ix >= nx || iy < 0 || iy >= nx) continue;
        out.emplace_back(static_cast<int>(row), static_cast<int>(iy * nx + ix), (tb - ta) * seg_len);
    }
}

Vector disk_phantom(Index nx) {
    Vector x = Vector::Zero(nx * nx);
    struct Disk {
        double cx, cy, r, value;
    };
    const Disk disks[] = {
        {0.50, 0.50, 0.34, 0.4},
        {0.38, 0.62, 0.15, 1.0},
        {0.64, 0.36, 0.11, 0.7},
    };
    for (Index iy = 0; iy < nx; ++iy)
        for (Index ix = 0; ix < nx; ++ix) {
            const double px = (static_cast<double>(ix) + 0.5) / static_cast<double>(nx);
            const double py = (static_cast<double>(iy) + 0.5) / static_cast<double>(nx);
            for (const auto& d : disks)
                if (std::hypot(px - d.cx, py - d.cy) <= d.r) x[iy * nx + ix] = d.value;
        }
    return x;
}

Vector blob_frames(Index nx, Index nt) {
    Vector x = Vector::Zero(nx * nx * nt);
    for (Index f = 0; f < nt; ++f) {
        const double tau = nt == 1 ? 0.0 : static_cast<double>(f) / static_cast<double>(nt - 1);
        const double c1x = 0.25 + 0.50 * tau, c1y = 0.30 + 0.30 * tau;
        const double c2x = 0.75 - 0.50 * tau, c2y = 0.70 - 0.35 * tau;
        for (Index iy = 0; iy < nx; ++iy)
            for (Index ix = 0; ix < nx; ++ix) {
                const double px = (static_cast<double>(ix) + 0.5) / static_cast<double>(nx);
                const double py = (static_cast<double>(iy) + 0.5) / static_cast<double>(nx);
                const double g1 = std::exp(-((px - c1x) * (px - c1x) + (py - c1y) * (py - c1y)) /
                                           (2.0 * 0.12 * 0.12));
                const double g2 = 0.8 * std::exp(-((px - c2x) * (px - c2x) + (py - c2y) * (py - c2y)) /
                                                 (2.0 * 0.10 * 0.10));
                x[f * nx * nx + iy * nx + ix] = g1 + g2;
            }
    }
    return x;
}

std::vector<double> step_angles(double offset_deg, double span_deg, Index count) {
    std::vector<double> angles(static_cast<std::size_t>(count));
    for (Index j = 0; j < count; ++j)
        angles[static_cast<std::size_t>(j)] =
            offset_deg + (count == 1 ? 0.0
                                     : span_deg * static_cast<double>(j) / static_cast<double>(count - 1));
    return angles;
}

}  // namespace

Eigen::SparseMatrix<double> projection_operator(Index nx, const std::vector<double>& angles_deg,
                                                Index n_det) {
    if (nx < 1 || n_det < 1 || angles_deg.empty())
        throw std::invalid_argument("projection_operator: empty geometry");
    std::vector<Eigen::Triplet<double>> trips;
    const double c = static_cast<double>(nx) / 2.0;
    const double reach = 2.0 * static_cast<double>(nx);
    Index row = 0;
    for (double deg : angles_deg) {
        const double th = deg * std::numbers::pi / 180.0;
        const double dxd = std::cos(th), dyd = std::sin(th);
        for (Index i = 0; i < n_det; ++i, ++row) {
            const double s = (static_cast<double>(i) - static_cast<double>(n_det - 1) / 2.0) *
                             static_cast<double>(nx) / static_cast<double>(n_det);
            const Point mid{c - s * dyd, c + s * dxd};
            trace_ray(nx, {mid.x - reach * dxd, mid.y - reach * dyd},
                      {mid.x + reach * dxd, mid.y + reach * dyd}, trips, row);
        }
    }
    Eigen::SparseMatrix<double> a(static_cast<Index>(angles_deg.size()) * n_det, nx * nx);
    a.setFromTriplets(trips.begin(), trips.end());
    if (a.nonZeros() == 0)
        throw NumericError("projection_operator: degenerate geometry, no ray intersects the grid");
    return a;
}

std::pair<Vector, double> add_noise(const Vector& b_true, double level, RngStream& rng) {
    if (!(level > 0.0)) throw std::invalid_argument("add_noise: level must be positive");
    if (b_true.norm() == 0.0) throw std::invalid_argument("add_noise: zero data vector");
    Vector xi(b_true.size());
    for (Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
    const double sigma = level * b_true.norm() / xi.norm();
    return {b_true + sigma * xi, sigma};
}

TestProblem make_tomography_problem(Index nx, Index n_angles, double noise_level,
                                    const MaternParams& matern, RngStream& rng) {
    if (nx < 8) throw std::invalid_argument("make_tomography_problem: nx must be >= 8");
    if (n_angles < 2) throw std::invalid_argument("make_tomography_problem: need at least 2 angles");

    TestProblem p;
    p.a_sparse = projection_operator(nx, step_angles(0.0, 180.0 - 180.0 / static_cast<double>(n_angles),
                                                     n_angles), nx);
    p.x_true = disk_phantom(nx);
    const Vector b_true = p.a_sparse * p.x_true;
    auto [b, sigma] = add_noise(b_true, noise_level, rng);
    p.sigma = sigma;
    p.lambda_true = 1.0 / (sigma * sigma);

    p.model.A = std::make_shared<SparseOperator>(p.a_sparse);
    p.model.b = b;
    p.model.R = std::make_shared<ScaledIdentityCovariance>(p.a_sparse.rows(), 1.0);
    p.model.Q = matern_covariance({matern.nu, matern.ell, grid_points_2d(nx)});
    p.model.mu = Vector::Zero(nx * nx);
    p.model.validate();

    p.meta = {"tomography", nx, 1, n_angles, nx, noise_level, 180.0, 0};
    return p;
}

TestProblem make_dynamic_problem(Index nx, Index nt, Index angles_per_step, double span_deg,
                                 double noise_level, const MaternParams& q_time,
                                 const MaternParams& q_space, RngStream& rng) {
    if (nx < 8) throw std::invalid_argument("make_dynamic_problem: nx must be >= 8");
    if (nt < 1) throw std::invalid_argument("make_dynamic_problem: nt must be >= 1");
    if (angles_per_step < 1) throw std::invalid_argument("make_dynamic_problem: need at least 1 angle");

    TestProblem p;
    std::vector<OperatorPtr> blocks;
    std::vector<Eigen::Triplet<double>> all;
    Index row0 = 0;
    for (Index i = 0; i < nt; ++i) {
        auto block = projection_operator(nx, step_angles(static_cast<double>(i), span_deg, angles_per_step),
                                         nx);
        for (int k = 0; k < block.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(block, k); it; ++it)
                all.emplace_back(static_cast<int>(row0 + it.row()),
                                 static_cast<int>(i * nx * nx + it.col()), it.value());
        row0 += block.rows();
        blocks.push_back(std::make_shared<SparseOperator>(std::move(block)));
    }
    p.a_sparse.resize(row0, nx * nx * nt);
    p.a_sparse.setFromTriplets(all.begin(), all.end());

    p.x_true = blob_frames(nx, nt);
    const Vector b_true = p.a_sparse * p.x_true;
    auto [b, sigma] = add_noise(b_true, noise_level, rng);
    p.sigma = sigma;
    p.lambda_true = 1.0 / (sigma * sigma);

    p.model.A = std::make_shared<BlockDiagOperator>(std::move(blocks));
    p.model.b = b;
    p.model.R = std::make_shared<ScaledIdentityCovariance>(row0, 1.0);
    auto q_t = matern_covariance({q_time.nu, q_time.ell, grid_points_1d(nt)});
    auto q_s = matern_covariance({q_space.nu, q_space.ell, grid_points_2d(nx)});
    p.model.Q = std::make_shared<KroneckerCovariance>(q_t, q_s);
    p.model.mu = Vector::Zero(nx * nx * nt);
    p.model.validate();

    p.meta = {"dynamic", nx, nt, angles_per_step, nx, noise_level, span_deg, 0};
    return p;
}

double estimate_lambda0(const Vector& b, Index row_len) {
    if (b.size() < 2) throw std::invalid_argument("estimate_lambda0: need at least 2 data points");
    if (row_len <= 0) row_len = b.size();
    std::vector<double> details;
    for (Index start = 0; start + 1 < b.size(); start += row_len) {
        const Index len = std::min(row_len, b.size() - start);
        for (Index i = 0; i + 1 < len; i += 2)
            details.push_back(std::abs(b[start + i] - b[start + i + 1]) / std::sqrt(2.0));
    }
    if (details.empty()) throw std::invalid_argument("estimate_lambda0: no detail coefficients");
    std::nth_element(details.begin(), details.begin() + static_cast<long>(details.size() / 2),
                     details.end());
    const double mad = details[details.size() / 2];
    if (mad == 0.0) throw NumericError("estimate_lambda0: zero MAD, data look noiseless or constant");
    const double sigma_hat = mad / 0.6745;
    return 1.0 / (sigma_hat * sigma_hat);
}

namespace {

// GCV of the projected problem min ||B z - gamma_1 e_1||^2 + eta^2 ||z||^2,
// written through the SVD of B.
double projected_gcv(const Vector& sv, const Vector& ghat, double g_perp_sq, double eta) {
    const double e2 = eta * eta;
    double num = g_perp_sq, tr = static_cast<double>(sv.size()) + 1.0;
    for (Index i = 0; i < sv.size(); ++i) {
        const double f = e2 / (sv[i] * sv[i] + e2);
        num += f * f * ghat[i] * ghat[i];
        tr -= sv[i] * sv[i] / (sv[i] * sv[i] + e2);
    }
    return num / (tr * tr);
}

}  // namespace

Delta0Estimate estimate_delta0(const GenGKState& state, double lambda0) {
    if (state.k < 2) throw std::invalid_argument("estimate_delta0: need a state with k >= 2");
    if (!(lambda0 > 0.0)) throw std::invalid_argument("estimate_delta0: lambda0 must be positive");

    Eigen::BDCSVD<Matrix> svd(state.bidiagonal(), Eigen::ComputeThinU);
    const Vector sv = svd.singularValues();
    Vector e1 = Vector::Zero(state.k + 1);
    e1[0] = state.gamma[0];
    const Vector ghat = svd.matrixU().transpose() * e1;
    const double g_perp_sq = std::max(0.0, e1.squaredNorm() - ghat.squaredNorm());

    constexpr int grid_points = 61;
    double best_eta = 0.0, best_val = std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (int i = 0; i < grid_points; ++i) {
        const double eta = std::pow(10.0, -6.0 + 12.0 * static_cast<double>(i) / (grid_points - 1));
        const double val = projected_gcv(sv, ghat, g_perp_sq, eta);
        if (val < best_val) {
            best_val = val;
            best_eta = eta;
            best_idx = i;
        }
    }

    Delta0Estimate out;
    out.at_edge = best_idx == 0 || best_idx == grid_points - 1;
    if (!out.at_edge) {
        // Golden-section refinement between the grid neighbours (in log space).
        double lo = std::log10(best_eta) - 12.0 / (grid_points - 1);
        double hi = std::log10(best_eta) + 12.0 / (grid_points - 1);
        const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
        double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
        for (int it = 0; it < 60; ++it) {
            if (projected_gcv(sv, ghat, g_perp_sq, std::pow(10.0, c)) <
                projected_gcv(sv, ghat, g_perp_sq, std::pow(10.0, d)))
                hi = d;
            else
                lo = c;
            c = hi - gr * (hi - lo);
            d = lo + gr * (hi - lo);
        }
        best_eta = std::pow(10.0, 0.5 * (lo + hi));
    }
    out.eta = best_eta;
    out.delta0 = lambda0 * best_eta * best_eta;
    return out;
}

Matrix neumann_laplacian_2d(Index nx) {
    if (nx < 2) throw std::invalid_argument("neumann_laplacian_2d: nx must be >= 2");
    const Index n = nx * nx;
    Matrix lap = Matrix::Zero(n, n);
    for (Index iy = 0; iy < nx; ++iy)
        for (Index ix = 0; ix < nx; ++ix) {
            const Index i = iy * nx + ix;
            const Index nbrs[4][2] = {{ix - 1, iy}, {ix + 1, iy}, {ix, iy - 1}, {ix, iy + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= nx || nb[1] < 0 || nb[1] >= nx) continue;
                lap(i, i) += 1.0;
                lap(i, nb[1] * nx + nb[0]) -= 1.0;
            }
        }
    return lap;
}

OperatorPtr laplacian_preconditioner(Index nx, Index nt, double gamma, const CovarianceOperator& q_time) {
    if (!(gamma >= 1.0)) throw std::invalid_argument("laplacian_preconditioner: gamma must be >= 1");
    if (q_time.dim() != nt) throw std::invalid_argument("laplacian_preconditioner: Q_t dimension mismatch");

    const Matrix qt = dense_materialize(q_time);
    Eigen::LLT<Matrix> qt_llt(qt);
    if (qt_llt.info() != Eigen::Success)
        throw NumericError("laplacian_preconditioner: Q_t is not positive definite");
    Matrix qt_inv = qt_llt.solve(Matrix::Identity(nt, nt));
    qt_inv = ((qt_inv + qt_inv.transpose()) * 0.5).eval();
    Eigen::LLT<Matrix> inv_llt(qt_inv);
    const Matrix g_t = Matrix(inv_llt.matrixL()).transpose();

    Matrix lap = neumann_laplacian_2d(nx);
    lap.diagonal().array() += 1e-8;
    Matrix lap_pow;
    if (gamma == 1.0) {
        lap_pow = lap;
    } else {
        Eigen::SelfAdjointEigenSolver<Matrix> es(lap);
        lap_pow = es.eigenvectors() *
                  es.eigenvalues().array().max(0.0).pow(gamma).matrix().asDiagonal() *
                  es.eigenvectors().transpose();
        lap_pow = ((lap_pow + lap_pow.transpose()) * 0.5).eval();
    }
    Eigen::LLT<Matrix> lap_llt(lap_pow);
    if (lap_llt.info() != Eigen::Success)
        throw NumericError("laplacian_preconditioner: shifted Laplacian power lost positive definiteness");
    const Matrix g_s = Matrix(lap_llt.matrixL()).transpose();

    return std::make_shared<KroneckerOperator>(g_t, g_s);
}

void export_bundle(const TestProblem& problem, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    mmio::write_coordinate(dir / "A.mtx", problem.a_sparse);
    mmio::write_array(dir / "b.mtx", problem.model.b);
    mmio::write_array(dir / "x_true.mtx", problem.x_true);

    nlohmann::json meta;
    meta["kind"] = problem.meta.kind;
    meta["nx"] = problem.meta.nx;
    meta["nt"] = problem.meta.nt;
    meta["n_angles"] = problem.meta.n_angles;
    meta["n_det"] = problem.meta.n_det;
    meta["noise_level"] = problem.meta.noise_level;
    meta["span_deg"] = problem.meta.span_deg;
    meta["sigma"] = problem.sigma;
    meta["lambda_true"] = problem.lambda_true;
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << "\n";
}

}  // namespace gkmcmc
