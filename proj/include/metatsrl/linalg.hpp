#pragma once

// Dense symmetric linear algebra and Gaussian sampling used by every
// posterior computation. Matrices are small (dimension up to ~110), so
// everything is plain row-major storage with O(n^3) kernels.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "metatsrl/rng.hpp"

namespace metatsrl {

using Vec = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Square matrix meant to hold a symmetric operand.
///
/// Element access is unchecked and mutable; symmetry is restored with
/// symmetrize(), which every SPD routine applies to its own copy first.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(std::size_t dim, double fill = 0.0);
    /// Row-major nested literal; throws DimensionMismatch if ragged and
    /// Error if asymmetric beyond 1e-12 relative tolerance.
    SymMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static SymMatrix identity(std::size_t dim);
    static SymMatrix scaled_identity(std::size_t dim, double scale);
    static SymMatrix diagonal(std::span<const double> diag);
    /// Builds from row-major entries; same checks as the literal constructor.
    static SymMatrix from_rows(const std::vector<Vec>& rows);

    std::size_t dim() const { return dim_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

    void symmetrize();
    /// Largest |a_ij - a_ji| relative to the largest |a_ij|.
    double asymmetry() const;

    /// this += scale * v v^T
    void add_outer(std::span<const double> v, double scale = 1.0);
    void add_diagonal(double value);
    Vec diag() const;
    double trace() const;
    double frobenius_norm() const;

    Vec operator*(std::span<const double> v) const;
    SymMatrix& operator+=(const SymMatrix& other);
    SymMatrix& operator-=(const SymMatrix& other);
    SymMatrix& operator*=(double s);
    friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
    friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
    friend SymMatrix operator*(double s, SymMatrix a) { return a *= s; }

    bool operator==(const SymMatrix&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Lower-triangular factor L (entries above the diagonal are zero).
class LowerTriangular {
public:
    LowerTriangular() = default;
    explicit LowerTriangular(std::size_t dim) : dim_(dim), data_(dim * dim, 0.0) {}

    std::size_t dim() const { return dim_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

    /// Solves L x = b.
    Vec solve(std::span<const double> b) const;
    /// Solves L^T x = b.
    Vec solve_transposed(std::span<const double> b) const;
    /// L z
    Vec multiply(std::span<const double> z) const;
    /// L L^T
    SymMatrix product_with_transpose() const;

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// L with L L^T = m. Throws NotPositiveDefinite if any pivot <= 0.
LowerTriangular cholesky(const SymMatrix& m);

/// Solves m x = rhs through a Cholesky factorization.
Vec spd_solve(const SymMatrix& m, std::span<const double> rhs);

/// m^{-1} through Cholesky solves against the identity.
SymMatrix spd_inverse(const SymMatrix& m);

struct EigenDecomposition {
    Vec values;                  ///< ascending
    std::vector<Vec> vectors;    ///< vectors[k] is the unit eigenvector of values[k]
};

/// Cyclic Jacobi iteration, run until the off-diagonal Frobenius norm is
/// below 1e-14 of the matrix norm.
EigenDecomposition symmetric_eigen(const SymMatrix& m);

double min_eigenvalue(const SymMatrix& m);

/// Replaces eigenvalues below `floor` by `floor`. Returns the repaired
/// matrix and whether any eigenvalue was raised.
std::pair<SymMatrix, bool> eigenvalue_floor(const SymMatrix& m, double floor);

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues at
/// or below rel_tol * max eigenvalue are treated as zero.
SymMatrix pseudo_inverse(const SymMatrix& m, double rel_tol = 1e-10);

/// mean + L z with L = cholesky(cov) and z standard normal from rng.
Vec sample_gaussian(std::span<const double> mean, const SymMatrix& cov, RngStream& rng);

/// Gaussian prior over one stage's parameters with its precision cached.
class PreparedPrior {
public:
    PreparedPrior() = default;
    /// Throws NotPositiveDefinite if cov is degenerate.
    PreparedPrior(Vec mean, const SymMatrix& cov);

    std::size_t dim() const { return mean_.size(); }
    const Vec& mean() const { return mean_; }
    const SymMatrix& precision() const { return precision_; }
    const Vec& precision_times_mean() const { return precision_mean_; }

private:
    Vec mean_;
    SymMatrix precision_;
    Vec precision_mean_;
};

/// Bayesian linear-regression posterior, stored as mean plus the Cholesky
/// factor C of the posterior precision (covariance = C^{-T} C^{-1}).
struct PosteriorState {
    Vec mean;
    LowerTriangular precision_factor;

    SymMatrix covariance() const;
    /// mean + C^{-T} z
    Vec sample(RngStream& rng) const;
};

/// Posterior given sufficient statistics gram = sum phi phi^T and
/// moment = sum phi b:
///   precision = gram / beta + prior precision
///   mean      = precision^{-1} (moment / beta + prior precision * prior mean)
PosteriorState posterior_from_stats(const PreparedPrior& prior, const SymMatrix& gram,
                                    std::span<const double> moment, double beta);

/// Posterior (mean, covariance) from explicit design rows and targets.
std::pair<Vec, SymMatrix> posterior_update(const Vec& prior_mean, const SymMatrix& prior_cov,
                                           const std::vector<Vec>& design_rows,
                                           const std::vector<double>& targets, double beta);

}  // namespace metatsrl
