#include "gkmcmc/operators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gkmcmc {

BlockDiagOperator::BlockDiagOperator(std::vector<OperatorPtr> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) throw std::invalid_argument("BlockDiagOperator: no blocks");
    for (const auto& b : blocks_) {
        rows_ += b->rows();
        cols_ += b->cols();
    }
}

Vector BlockDiagOperator::apply(const Vector& v) const {
    check_apply(v);
    Vector out(rows_);
    Index ri = 0, ci = 0;
    for (const auto& b : blocks_) {
        out.segment(ri, b->rows()) = b->apply(v.segment(ci, b->cols()));
        ri += b->rows();
        ci += b->cols();
    }
    return out;
}

Vector BlockDiagOperator::apply_transpose(const Vector& v) const {
    check_apply_transpose(v);
    Vector out(cols_);
    Index ri = 0, ci = 0;
    for (const auto& b : blocks_) {
        out.segment(ci, b->cols()) = b->apply_transpose(v.segment(ri, b->rows()));
        ri += b->rows();
        ci += b->cols();
    }
    return out;
}

// (B (x) C) v = vec(C mat(v) B^T) with mat(v) laid out column-major,
// one column per block of v.
Vector KroneckerOperator::apply(const Vector& v) const {
    check_apply(v);
    Eigen::Map<const Matrix> V(v.data(), right_.cols(), left_.cols());
    Matrix out = right_ * V * left_.transpose();
    return Eigen::Map<Vector>(out.data(), out.size());
}

Vector KroneckerOperator::apply_transpose(const Vector& v) const {
    check_apply_transpose(v);
    Eigen::Map<const Matrix> V(v.data(), right_.rows(), left_.rows());
    Matrix out = right_.transpose() * V * left_;
    return Eigen::Map<Vector>(out.data(), out.size());
}

DenseSpdCovariance::DenseSpdCovariance(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0)
        throw std::invalid_argument("DenseSpdCovariance: matrix must be square and non-empty");
    const double asym = (m_ - m_.transpose()).norm();
    if (asym > 1e-10 * std::max(1.0, m_.norm()))
        throw std::invalid_argument("DenseSpdCovariance: matrix is not symmetric");
    m_ = ((m_ + m_.transpose()) * 0.5).eval();
    llt_.compute(m_);
    if (llt_.info() != Eigen::Success)
        throw NumericError("DenseSpdCovariance: Cholesky failed, matrix is not positive definite");
}

void DenseSpdCovariance::ensure_eig() const {
    std::call_once(eig_once_, [this] {
        Eigen::SelfAdjointEigenSolver<Matrix> es(m_);
        if (es.info() != Eigen::Success)
            throw NumericError("DenseSpdCovariance: eigendecomposition failed");
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw NumericError("DenseSpdCovariance: non-positive eigenvalue in square-root path");
        eig_vectors_ = es.eigenvectors();
        eig_sqrt_ = es.eigenvalues().cwiseSqrt();
        eig_inv_sqrt_ = eig_sqrt_.cwiseInverse();
    });
}

Vector DenseSpdCovariance::sqrt_apply(const Vector& v) const {
    check_apply(v);
    ensure_eig();
    return eig_vectors_ * eig_sqrt_.cwiseProduct(eig_vectors_.transpose() * v);
}

Vector DenseSpdCovariance::inv_sqrt_apply(const Vector& v) const {
    check_apply(v);
    ensure_eig();
    return eig_vectors_ * eig_inv_sqrt_.cwiseProduct(eig_vectors_.transpose() * v);
}

KroneckerCovariance::KroneckerCovariance(CovariancePtr left, CovariancePtr right)
    : left_(std::move(left)), right_(std::move(right)) {
    if (!left_ || !right_) throw std::invalid_argument("KroneckerCovariance: null factor");
}

template <class F, class G>
Vector KroneckerCovariance::kron_apply(const Vector& v, F&& right_fn, G&& left_fn) const {
    const Index ns = right_->dim(), nt = left_->dim();
    Eigen::Map<const Matrix> V(v.data(), ns, nt);
    Matrix W(ns, nt);
    for (Index j = 0; j < nt; ++j) W.col(j) = right_fn(V.col(j));
    // Multiply by the (symmetric) left factor from the right, row by row.
    Matrix out(ns, nt);
    for (Index i = 0; i < ns; ++i) out.row(i) = left_fn(W.row(i).transpose()).transpose();
    return Eigen::Map<Vector>(out.data(), out.size());
}

Vector KroneckerCovariance::apply(const Vector& v) const {
    check_apply(v);
    return kron_apply(
        v, [this](const Vector& x) { return right_->apply(x); },
        [this](const Vector& x) { return left_->apply(x); });
}

Vector KroneckerCovariance::solve(const Vector& v) const {
    check_apply(v);
    return kron_apply(
        v, [this](const Vector& x) { return right_->solve(x); },
        [this](const Vector& x) { return left_->solve(x); });
}

Vector KroneckerCovariance::sqrt_apply(const Vector& v) const {
    check_apply(v);
    return kron_apply(
        v, [this](const Vector& x) { return right_->sqrt_apply(x); },
        [this](const Vector& x) { return left_->sqrt_apply(x); });
}

Vector KroneckerCovariance::inv_sqrt_apply(const Vector& v) const {
    check_apply(v);
    return kron_apply(
        v, [this](const Vector& x) { return right_->inv_sqrt_apply(x); },
        [this](const Vector& x) { return left_->inv_sqrt_apply(x); });
}

SubsampledCovariance::SubsampledCovariance(CovariancePtr base, std::vector<Index> indices)
    : base_(std::move(base)), indices_(std::move(indices)) {
    if (!base_) throw std::invalid_argument("SubsampledCovariance: null base");
    if (indices_.empty()) throw std::invalid_argument("SubsampledCovariance: empty selection");
    std::set<Index> seen;
    for (Index i : indices_) {
        if (i < 0 || i >= base_->dim())
            throw std::invalid_argument("SubsampledCovariance: index out of range");
        if (!seen.insert(i).second)
            throw std::invalid_argument("SubsampledCovariance: duplicate index");
    }
}

Vector SubsampledCovariance::apply(const Vector& v) const {
    check_apply(v);
    Vector scattered = Vector::Zero(base_->dim());
    for (std::size_t j = 0; j < indices_.size(); ++j) scattered[indices_[j]] = v[static_cast<Index>(j)];
    const Vector full = base_->apply(scattered);
    Vector out(rows());
    for (std::size_t j = 0; j < indices_.size(); ++j) out[static_cast<Index>(j)] = full[indices_[j]];
    return out;
}

std::shared_ptr<const SubsampledCovariance> subsampled_covariance(CovariancePtr base,
                                                                  std::vector<Index> indices) {
    return std::make_shared<const SubsampledCovariance>(std::move(base), std::move(indices));
}

namespace {

double matern_kernel(double nu, double r_over_ell) {
    const double t = r_over_ell;
    if (nu == 0.5) return std::exp(-t);
    if (nu == 1.5) {
        const double s = std::sqrt(3.0) * t;
        return (1.0 + s) * std::exp(-s);
    }
    // nu == 2.5
    const double s = std::sqrt(5.0) * t;
    return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

}  // namespace

std::shared_ptr<const DenseSpdCovariance> matern_covariance(const MaternSpec& spec) {
    if (!(spec.ell > 0.0)) throw std::invalid_argument("matern_covariance: length scale must be positive");
    if (spec.points.rows() == 0) throw std::invalid_argument("matern_covariance: empty grid");
    if (spec.nu != 0.5 && spec.nu != 1.5 && spec.nu != 2.5)
        throw std::invalid_argument("matern_covariance: smoothness must be one of 1/2, 3/2, 5/2");
    if (spec.jitter < 0.0) throw std::invalid_argument("matern_covariance: jitter must be nonnegative");

    Matrix pts = spec.points;
    if (spec.normalize) {
        for (Index d = 0; d < pts.cols(); ++d) {
            const double lo = pts.col(d).minCoeff(), hi = pts.col(d).maxCoeff();
            if (hi > lo)
                pts.col(d) = (pts.col(d).array() - lo) / (hi - lo);
            else
                pts.col(d).setZero();
        }
    }

    const Index n = pts.rows();
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i) {
        k(i, i) = 1.0 + spec.jitter;
        for (Index j = 0; j < i; ++j) {
            const double r = (pts.row(i) - pts.row(j)).norm();
            const double val = matern_kernel(spec.nu, r / spec.ell);
            k(i, j) = val;
            k(j, i) = val;
        }
    }
    return std::make_shared<const DenseSpdCovariance>(std::move(k));
}

Matrix grid_points_1d(Index n) {
    if (n < 1) throw std::invalid_argument("grid_points_1d: need n >= 1");
    Matrix pts(n, 1);
    for (Index i = 0; i < n; ++i) pts(i, 0) = (n == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    return pts;
}

Matrix grid_points_2d(Index n) {
    if (n < 1) throw std::invalid_argument("grid_points_2d: need n >= 1");
    Matrix pts(n * n, 2);
    for (Index iy = 0; iy < n; ++iy)
        for (Index ix = 0; ix < n; ++ix) {
            const Index row = iy * n + ix;
            pts(row, 0) = (static_cast<double>(ix) + 0.5) / static_cast<double>(n);
            pts(row, 1) = (static_cast<double>(iy) + 0.5) / static_cast<double>(n);
        }
    return pts;
}

Matrix dense_materialize(const LinearOperator& op, Index max_entries) {
    if (op.rows() * op.cols() > max_entries)
        throw std::invalid_argument("dense_materialize: operator exceeds the desk-scale entry cap");
    Matrix out(op.rows(), op.cols());
    Vector e = Vector::Zero(op.cols());
    for (Index j = 0; j < op.cols(); ++j) {
        e[j] = 1.0;
        out.col(j) = op.apply(e);
        e[j] = 0.0;
    }
    return out;
}

}  // namespace gkmcmc
