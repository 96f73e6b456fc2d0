#include "metatsrl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metatsrl/errors.hpp"

namespace metatsrl {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatch("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionMismatch("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------- SymMatrix

SymMatrix::SymMatrix(std::size_t dim, double fill) : dim_(dim), data_(dim * dim, fill) {}

SymMatrix::SymMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : dim_(rows.size()), data_() {
    data_.reserve(dim_ * dim_);
    for (const auto& r : rows) {
        if (r.size() != dim_) throw DimensionMismatch("SymMatrix literal must be square");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    if (asymmetry() > 1e-12) throw Error("SymMatrix literal is not symmetric");
    symmetrize();
}

SymMatrix SymMatrix::from_rows(const std::vector<Vec>& rows) {
    SymMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw DimensionMismatch("SymMatrix rows must be square");
        std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + i * m.dim_);
    }
    if (m.asymmetry() > 1e-12) throw Error("matrix is not symmetric");
    m.symmetrize();
    return m;
}

SymMatrix SymMatrix::identity(std::size_t dim) { return scaled_identity(dim, 1.0); }

SymMatrix SymMatrix::scaled_identity(std::size_t dim, double scale) {
    SymMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = scale;
    return m;
}

SymMatrix SymMatrix::diagonal(std::span<const double> diag) {
    SymMatrix m(diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

void SymMatrix::symmetrize() {
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = i + 1; j < dim_; ++j) {
            const double avg = 0.5 * ((*this)(i, j) + (*this)(j, i));
            (*this)(i, j) = avg;
            (*this)(j, i) = avg;
        }
}

double SymMatrix::asymmetry() const {
    double scale = 0.0, worst = 0.0;
    for (double v : data_) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = i + 1; j < dim_; ++j)
            worst = std::max(worst, std::abs((*this)(i, j) - (*this)(j, i)));
    return scale > 0.0 ? worst / scale : 0.0;
}

void SymMatrix::add_outer(std::span<const double> v, double scale) {
    if (v.size() != dim_) throw DimensionMismatch("add_outer: size mismatch");
    for (std::size_t i = 0; i < dim_; ++i) {
        const double vi = scale * v[i];
        if (vi == 0.0) continue;
        double* row = data_.data() + i * dim_;
        for (std::size_t j = 0; j < dim_; ++j) row[j] += vi * v[j];
    }
}

void SymMatrix::add_diagonal(double value) {
    for (std::size_t i = 0; i < dim_; ++i) (*this)(i, i) += value;
}

Vec SymMatrix::diag() const {
    Vec d(dim_);
    for (std::size_t i = 0; i < dim_; ++i) d[i] = (*this)(i, i);
    return d;
}

double SymMatrix::trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) t += (*this)(i, i);
    return t;
}

double SymMatrix::frobenius_norm() const { return norm2(data_); }

Vec SymMatrix::operator*(std::span<const double> v) const {
    if (v.size() != dim_) throw DimensionMismatch("SymMatrix * Vec: size mismatch");
    Vec out(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = dot(row(i), v);
    return out;
}

SymMatrix& SymMatrix::operator+=(const SymMatrix& other) {
    if (other.dim_ != dim_) throw DimensionMismatch("SymMatrix +: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

SymMatrix& SymMatrix::operator-=(const SymMatrix& other) {
    if (other.dim_ != dim_) throw DimensionMismatch("SymMatrix -: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

SymMatrix& SymMatrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

// ---------------------------------------------------------- LowerTriangular

Vec LowerTriangular::solve(std::span<const double> b) const {
    if (b.size() != dim_) throw DimensionMismatch("triangular solve: size mismatch");
    Vec x(b.begin(), b.end());
    for (std::size_t i = 0; i < dim_; ++i) {
        const double* row = data_.data() + i * dim_;
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= row[k] * x[k];
        x[i] = s / row[i];
    }
    return x;
}

Vec LowerTriangular::solve_transposed(std::span<const double> b) const {
    if (b.size() != dim_) throw DimensionMismatch("triangular solve: size mismatch");
    Vec x(b.begin(), b.end());
    for (std::size_t ii = dim_; ii-- > 0;) {
        x[ii] /= (*this)(ii, ii);
        const double xi = x[ii];
        const double* row = data_.data() + ii * dim_;
        for (std::size_t k = 0; k < ii; ++k) x[k] -= row[k] * xi;
    }
    return x;
}

Vec LowerTriangular::multiply(std::span<const double> z) const {
    if (z.size() != dim_) throw DimensionMismatch("triangular multiply: size mismatch");
    Vec out(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
        const double* row = data_.data() + i * dim_;
        double s = 0.0;
        for (std::size_t k = 0; k <= i; ++k) s += row[k] * z[k];
        out[i] = s;
    }
    return out;
}

SymMatrix LowerTriangular::product_with_transpose() const {
    SymMatrix m(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k <= j; ++k) s += (*this)(i, k) * (*this)(j, k);
            m(i, j) = s;
            m(j, i) = s;
        }
    return m;
}

// ----------------------------------------------------------------- kernels

LowerTriangular cholesky(const SymMatrix& input) {
    SymMatrix m = input;
    m.symmetrize();
    const std::size_t n = m.dim();
    LowerTriangular l(n);
    for (std::size_t j = 0; j < n; ++j) {
        double pivot = m(j, j);
        for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
        if (!(pivot > 0.0)) throw NotPositiveDefinite("cholesky pivot " + std::to_string(j));
        const double ljj = std::sqrt(pivot);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Vec spd_solve(const SymMatrix& m, std::span<const double> rhs) {
    if (rhs.size() != m.dim()) throw DimensionMismatch("spd_solve: size mismatch");
    const auto l = cholesky(m);
    return l.solve_transposed(l.solve(rhs));
}

SymMatrix spd_inverse(const SymMatrix& m) {
    const auto l = cholesky(m);
    const std::size_t n = m.dim();
    SymMatrix inv(n);
    Vec e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        const Vec col = l.solve_transposed(l.solve(e));
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    inv.symmetrize();
    return inv;
}

EigenDecomposition symmetric_eigen(const SymMatrix& input) {
    SymMatrix a = input;
    a.symmetrize();
    const std::size_t n = a.dim();
    // v is stored row-major with eigenvectors in columns.
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    const double scale = a.frobenius_norm();
    const double target = 1e-14 * scale;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (std::sqrt(off) <= target || off == 0.0) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double g = a(r, p);
                    const double h = a(r, q);
                    const double rp = g - s * (h + g * tau);
                    const double rq = h + s * (g - h * tau);
                    a(r, p) = rp;
                    a(p, r) = rp;
                    a(r, q) = rq;
                    a(q, r) = rq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double g = v[r * n + p];
                    const double h = v[r * n + q];
                    v[r * n + p] = g - s * (h + g * tau);
                    v[r * n + q] = h + s * (g - h * tau);
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
    EigenDecomposition out;
    out.values.reserve(n);
    out.vectors.reserve(n);
    for (std::size_t k : order) {
        out.values.push_back(a(k, k));
        Vec col(n);
        for (std::size_t r = 0; r < n; ++r) col[r] = v[r * n + k];
        out.vectors.push_back(std::move(col));
    }
    return out;
}

double min_eigenvalue(const SymMatrix& m) {
    if (m.dim() == 0) throw DimensionMismatch("min_eigenvalue of empty matrix");
    if (m.dim() == 1) return m(0, 0);
    return symmetric_eigen(m).values.front();
}

namespace {

SymMatrix recompose(const EigenDecomposition& e, const Vec& values) {
    const std::size_t n = values.size();
    SymMatrix m(n);
    for (std::size_t k = 0; k < n; ++k) {
        if (values[k] == 0.0) continue;
        m.add_outer(e.vectors[k], values[k]);
    }
    m.symmetrize();
    return m;
}

}  // namespace

std::pair<SymMatrix, bool> eigenvalue_floor(const SymMatrix& m, double floor) {
    auto e = symmetric_eigen(m);
    if (e.values.front() >= floor) {
        SymMatrix copy = m;
        copy.symmetrize();
        return {copy, false};
    }
    Vec values = e.values;
    for (double& v : values) v = std::max(v, floor);
    return {recompose(e, values), true};
}

SymMatrix pseudo_inverse(const SymMatrix& m, double rel_tol) {
    const auto e = symmetric_eigen(m);
    const double top = std::max(std::abs(e.values.front()), std::abs(e.values.back()));
    Vec values(e.values.size(), 0.0);
    for (std::size_t k = 0; k < values.size(); ++k)
        if (e.values[k] > rel_tol * top && e.values[k] > 0.0) values[k] = 1.0 / e.values[k];
    return recompose(e, values);
}

Vec sample_gaussian(std::span<const double> mean, const SymMatrix& cov, RngStream& rng) {
    if (mean.size() != cov.dim()) throw DimensionMismatch("sample_gaussian: size mismatch");
    const auto l = cholesky(cov);
    Vec z(mean.size());
    for (double& zi : z) zi = rng.normal();
    Vec x = l.multiply(z);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += mean[i];
    return x;
}

// --------------------------------------------------------------- posterior

PreparedPrior::PreparedPrior(Vec mean, const SymMatrix& cov)
    : mean_(std::move(mean)), precision_(spd_inverse(cov)) {
    if (mean_.size() != cov.dim()) throw DimensionMismatch("prior mean/cov size mismatch");
    precision_mean_ = precision_ * mean_;
}

SymMatrix PosteriorState::covariance() const {
    return spd_inverse(precision_factor.product_with_transpose());
}

Vec PosteriorState::sample(RngStream& rng) const {
    Vec z(mean.size());
    for (double& zi : z) zi = rng.normal();
    Vec x = precision_factor.solve_transposed(z);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += mean[i];
    return x;
}

PosteriorState posterior_from_stats(const PreparedPrior& prior, const SymMatrix& gram,
                                    std::span<const double> moment, double beta) {
    const std::size_t n = prior.dim();
    if (gram.dim() != n || moment.size() != n)
        throw DimensionMismatch("posterior_from_stats: size mismatch");
    if (!(beta > 0.0)) throw Error("posterior noise beta must be positive");
    const double inv_beta = 1.0 / beta;
    SymMatrix precision = prior.precision();
    {
        auto p = precision.data();
        auto g = gram.data();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += inv_beta * g[i];
    }
    Vec rhs = prior.precision_times_mean();
    axpy(inv_beta, moment, rhs);
    PosteriorState post;
    post.precision_factor = cholesky(precision);
    post.mean = post.precision_factor.solve_transposed(post.precision_factor.solve(rhs));
    return post;
}

std::pair<Vec, SymMatrix> posterior_update(const Vec& prior_mean, const SymMatrix& prior_cov,
                                           const std::vector<Vec>& design_rows,
                                           const std::vector<double>& targets, double beta) {
    if (design_rows.size() != targets.size())
        throw DimensionMismatch("posterior_update: rows and targets differ in length");
    if (design_rows.empty()) {
        SymMatrix cov = prior_cov;
        cov.symmetrize();
        cholesky(cov);  // validates
        return {prior_mean, cov};
    }
    const std::size_t n = prior_mean.size();
    SymMatrix gram(n);
    Vec moment(n, 0.0);
    for (std::size_t i = 0; i < design_rows.size(); ++i) {
        gram.add_outer(design_rows[i]);
        axpy(targets[i], design_rows[i], moment);
    }
    const PreparedPrior prior(prior_mean, prior_cov);
    auto post = posterior_from_stats(prior, gram, moment, beta);
    return {post.mean, post.covariance()};
}

}  // namespace metatsrl
