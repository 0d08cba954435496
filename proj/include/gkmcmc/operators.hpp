#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <memory>
#include <mutex>
#include <vector>

#include "gkmcmc/common.hpp"

namespace gkmcmc {

// Matrix-free linear operator.  Implementations are immutable after
// construction and safe to share across concurrently running chains.
class LinearOperator {
public:
    virtual ~LinearOperator() = default;

    virtual Index rows() const = 0;
    virtual Index cols() const = 0;

    virtual Vector apply(const Vector& v) const = 0;
    virtual Vector apply_transpose(const Vector& v) const = 0;

protected:
    void check_apply(const Vector& v) const {
        if (v.size() != cols())
            throw std::invalid_argument("LinearOperator::apply: vector length " +
                                        std::to_string(v.size()) + " != cols " + std::to_string(cols()));
    }
    void check_apply_transpose(const Vector& v) const {
        if (v.size() != rows())
            throw std::invalid_argument("LinearOperator::apply_transpose: vector length " +
                                        std::to_string(v.size()) + " != rows " + std::to_string(rows()));
    }
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

// Square SPD operator.  Inverse and square-root actions are optional
// capabilities; the sampling code only relies on plain matvecs with Q, while
// dense oracles and the TSVD/rSVD path ask for the extras.
class CovarianceOperator : public LinearOperator {
public:
    Index dim() const { return rows(); }
    Vector apply_transpose(const Vector& v) const override { return apply(v); }

    virtual bool has_solve() const { return false; }
    virtual Vector solve(const Vector&) const {
        throw std::logic_error("CovarianceOperator: exact inverse not available");
    }
    virtual bool has_sqrt() const { return false; }
    virtual Vector sqrt_apply(const Vector&) const {
        throw std::logic_error("CovarianceOperator: exact square root not available");
    }
    virtual Vector inv_sqrt_apply(const Vector&) const {
        throw std::logic_error("CovarianceOperator: exact inverse square root not available");
    }
};

using CovariancePtr = std::shared_ptr<const CovarianceOperator>;

// ---------------------------------------------------------------------------
// Concrete operators
// ---------------------------------------------------------------------------

class DenseOperator final : public LinearOperator {
public:
    explicit DenseOperator(Matrix m) : m_(std::move(m)) {}
    Index rows() const override { return m_.rows(); }
    Index cols() const override { return m_.cols(); }
    Vector apply(const Vector& v) const override {
        check_apply(v);
        return m_ * v;
    }
    Vector apply_transpose(const Vector& v) const override {
        check_apply_transpose(v);
        return m_.transpose() * v;
    }
    const Matrix& matrix() const { return m_; }

private:
    Matrix m_;
};

class SparseOperator final : public LinearOperator {
public:
    explicit SparseOperator(Eigen::SparseMatrix<double> m) : m_(std::move(m)) { m_.makeCompressed(); }
    Index rows() const override { return m_.rows(); }
    Index cols() const override { return m_.cols(); }
    Vector apply(const Vector& v) const override {
        check_apply(v);
        return m_ * v;
    }
    Vector apply_transpose(const Vector& v) const override {
        check_apply_transpose(v);
        return m_.transpose() * v;
    }
    const Eigen::SparseMatrix<double>& matrix() const { return m_; }

private:
    Eigen::SparseMatrix<double> m_;
};

// Operator defined by matvec callbacks; the captured state must be immutable.
class FunctionOperator final : public LinearOperator {
public:
    using Fn = std::function<Vector(const Vector&)>;
    FunctionOperator(Index rows, Index cols, Fn fwd, Fn tr)
        : rows_(rows), cols_(cols), fwd_(std::move(fwd)), tr_(std::move(tr)) {}
    Index rows() const override { return rows_; }
    Index cols() const override { return cols_; }
    Vector apply(const Vector& v) const override {
        check_apply(v);
        return fwd_(v);
    }
    Vector apply_transpose(const Vector& v) const override {
        check_apply_transpose(v);
        return tr_(v);
    }

private:
    Index rows_, cols_;
    Fn fwd_, tr_;
};

// Block-diagonal composition; apply distributes over the blocks.
class BlockDiagOperator final : public LinearOperator {
public:
    explicit BlockDiagOperator(std::vector<OperatorPtr> blocks);
    Index rows() const override { return rows_; }
    Index cols() const override { return cols_; }
    Vector apply(const Vector& v) const override;
    Vector apply_transpose(const Vector& v) const override;
    const std::vector<OperatorPtr>& blocks() const { return blocks_; }

private:
    std::vector<OperatorPtr> blocks_;
    Index rows_ = 0, cols_ = 0;
};

// General Kronecker product left (x) right of dense factors, applied through the
// reshape identity (never forming the product).
class KroneckerOperator final : public LinearOperator {
public:
    KroneckerOperator(Matrix left, Matrix right) : left_(std::move(left)), right_(std::move(right)) {}
    Index rows() const override { return left_.rows() * right_.rows(); }
    Index cols() const override { return left_.cols() * right_.cols(); }
    Vector apply(const Vector& v) const override;
    Vector apply_transpose(const Vector& v) const override;

private:
    Matrix left_, right_;
};

class ScaledIdentityCovariance final : public CovarianceOperator {
public:
    ScaledIdentityCovariance(Index dim, double scale) : dim_(dim), scale_(scale) {
        if (dim < 1 || !(scale > 0.0))
            throw std::invalid_argument("ScaledIdentityCovariance: need dim >= 1 and scale > 0");
    }
    Index rows() const override { return dim_; }
    Index cols() const override { return dim_; }
    Vector apply(const Vector& v) const override {
        check_apply(v);
        return scale_ * v;
    }
    bool has_solve() const override { return true; }
    Vector solve(const Vector& v) const override { return v / scale_; }
    bool has_sqrt() const override { return true; }
    Vector sqrt_apply(const Vector& v) const override { return std::sqrt(scale_) * v; }
    Vector inv_sqrt_apply(const Vector& v) const override { return v / std::sqrt(scale_); }

private:
    Index dim_;
    double scale_;
};

class DiagonalCovariance final : public CovarianceOperator {
public:
    explicit DiagonalCovariance(Vector d) : d_(std::move(d)) {
        if (d_.size() == 0 || (d_.array() <= 0.0).any())
            throw std::invalid_argument("DiagonalCovariance: diagonal must be positive");
    }
    Index rows() const override { return d_.size(); }
    Index cols() const override { return d_.size(); }
    Vector apply(const Vector& v) const override {
        check_apply(v);
        return d_.cwiseProduct(v);
    }
    bool has_solve() const override { return true; }
    Vector solve(const Vector& v) const override { return v.cwiseQuotient(d_); }
    bool has_sqrt() const override { return true; }
    Vector sqrt_apply(const Vector& v) const override { return d_.cwiseSqrt().cwiseProduct(v); }
    Vector inv_sqrt_apply(const Vector& v) const override { return v.cwiseQuotient(d_.cwiseSqrt()); }

private:
    Vector d_;
};

// Dense SPD covariance.  Cholesky for solves is built up front; the
// eigendecomposition backing sqrt/inv-sqrt is built on first use (call_once,
// so const access stays thread-safe).
class DenseSpdCovariance final : public CovarianceOperator {
public:
    explicit DenseSpdCovariance(Matrix m);
    Index rows() const override { return m_.rows(); }
    Index cols() const override { return m_.cols(); }
    Vector apply(const Vector& v) const override {
        check_apply(v);
        return m_.selfadjointView<Eigen::Lower>() * v;
    }
    bool has_solve() const override { return true; }
    Vector solve(const Vector& v) const override { return llt_.solve(v); }
    bool has_sqrt() const override { return true; }
    Vector sqrt_apply(const Vector& v) const override;
    Vector inv_sqrt_apply(const Vector& v) const override;

    const Matrix& matrix() const { return m_; }
    // Lower Cholesky factor P with m = P P^T.
    Matrix chol_lower() const { return llt_.matrixL(); }

private:
    void ensure_eig() const;
    Matrix m_;
    Eigen::LLT<Matrix> llt_;
    mutable std::once_flag eig_once_;
    mutable Matrix eig_vectors_;
    mutable Vector eig_sqrt_, eig_inv_sqrt_;
};

// Kronecker product of two SPD covariances, Q = Q_left (x) Q_right.  Solve and
// square root factor through the Kronecker structure when both factors supply
// them.
class KroneckerCovariance final : public CovarianceOperator {
public:
    KroneckerCovariance(CovariancePtr left, CovariancePtr right);
    Index rows() const override { return left_->dim() * right_->dim(); }
    Index cols() const override { return rows(); }
    Vector apply(const Vector& v) const override;
    bool has_solve() const override { return left_->has_solve() && right_->has_solve(); }
    Vector solve(const Vector& v) const override;
    bool has_sqrt() const override { return left_->has_sqrt() && right_->has_sqrt(); }
    Vector sqrt_apply(const Vector& v) const override;
    Vector inv_sqrt_apply(const Vector& v) const override;
    const CovarianceOperator& left() const { return *left_; }
    const CovarianceOperator& right() const { return *right_; }

private:
    template <class F, class G>
    Vector kron_apply(const Vector& v, F&& right_fn, G&& left_fn) const;
    CovariancePtr left_, right_;
};

// S Q_M S^T for a selection matrix S picking `indices` rows: scatter, apply the
// full covariance, gather.  Equals the principal submatrix of Q_M exactly.
class SubsampledCovariance final : public CovarianceOperator {
public:
    SubsampledCovariance(CovariancePtr base, std::vector<Index> indices);
    Index rows() const override { return static_cast<Index>(indices_.size()); }
    Index cols() const override { return rows(); }
    Vector apply(const Vector& v) const override;

private:
    CovariancePtr base_;
    std::vector<Index> indices_;
};

// ---------------------------------------------------------------------------
// Matern kernels
// ---------------------------------------------------------------------------

struct MaternSpec {
    double nu = 0.5;         // smoothness, one of 1/2, 3/2, 5/2
    double ell = 0.25;       // length scale in grid-coordinate units
    Matrix points;           // one d-dimensional coordinate per row
    double jitter = 1e-10;   // added to the diagonal
    bool normalize = false;  // min-max rescale coordinates to [0,1]^d first
};

// Dense materialized Matern covariance.  Kernel value at r = 0 is 1 (+jitter).
std::shared_ptr<const DenseSpdCovariance> matern_covariance(const MaternSpec& spec);

// Evenly spaced points: 1-D in [0,1], or pixel centers of an n x n unit square.
Matrix grid_points_1d(Index n);
Matrix grid_points_2d(Index n);

std::shared_ptr<const SubsampledCovariance> subsampled_covariance(CovariancePtr base,
                                                                  std::vector<Index> indices);

// Column-by-column materialization, column j = op(e_j).  Guarded by an entry
// cap so oracle paths cannot be used on problems they were never meant for.
Matrix dense_materialize(const LinearOperator& op, Index max_entries = 4000000);

}  // namespace gkmcmc
