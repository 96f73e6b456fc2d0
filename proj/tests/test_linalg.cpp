#include <doctest.h>

#include <cmath>

#include "metatsrl/errors.hpp"
#include "metatsrl/linalg.hpp"

using namespace metatsrl;

namespace {

SymMatrix random_spd(std::size_t n, RngStream& rng) {
    SymMatrix m(n);
    for (std::size_t k = 0; k < n + 2; ++k) {
        Vec v(n);
        for (auto& x : v) x = rng.normal();
        m.add_outer(v);
    }
    m.add_diagonal(0.1);
    return m;
}

}  // namespace

TEST_CASE("cholesky of the identity is the identity") {
    const auto L = cholesky(SymMatrix::identity(3));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(L(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("cholesky of a 2x2 matches the hand factor") {
    const auto L = cholesky(SymMatrix{{4, 2}, {2, 3}});
    CHECK(L(0, 0) == doctest::Approx(2.0));
    CHECK(L(0, 1) == 0.0);
    CHECK(L(1, 0) == doctest::Approx(1.0));
    CHECK(L(1, 1) == doctest::Approx(std::sqrt(2.0)));
    const auto back = L.product_with_transpose();
    CHECK(back(0, 0) == doctest::Approx(4));
    CHECK(back(0, 1) == doctest::Approx(2));
    CHECK(back(1, 1) == doctest::Approx(3));
}

TEST_CASE("cholesky rejects indefinite input") {
    CHECK_THROWS_AS(cholesky(SymMatrix{{1, 2}, {2, 1}}), NotPositiveDefinite);
    CHECK_THROWS_AS(cholesky(SymMatrix(2, 0.0)), NotPositiveDefinite);
}

TEST_CASE("literal constructor rejects ragged and asymmetric input") {
    CHECK_THROWS_AS((SymMatrix{{1, 2}, {2}}), DimensionMismatch);
    CHECK_THROWS_AS((SymMatrix{{1, 2}, {3, 1}}), Error);
}

TEST_CASE("min_eigenvalue") {
    CHECK(min_eigenvalue(SymMatrix::identity(2)) == doctest::Approx(1.0));
    const Vec d{2, 5};
    CHECK(min_eigenvalue(SymMatrix::diagonal(d)) == doctest::Approx(2.0));
    CHECK(min_eigenvalue(SymMatrix{{2, 1}, {1, 2}}) == doctest::Approx(1.0));
}

TEST_CASE("symmetric_eigen reconstructs random matrices") {
    RngStream rng(11, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial % 7;
        SymMatrix m(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
        const auto e = symmetric_eigen(m);
        for (std::size_t k = 1; k < n; ++k) CHECK(e.values[k - 1] <= e.values[k]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < n; ++k) s += e.values[k] * e.vectors[k][i] * e.vectors[k][j];
                CHECK(s == doctest::Approx(m(i, j)).epsilon(1e-10));
            }
    }
}

TEST_CASE("spd_solve") {
    const Vec a{3, 4};
    CHECK(spd_solve(SymMatrix::identity(2), a) == Vec{3, 4});
    const Vec d{2, 4};
    const auto x = spd_solve(SymMatrix::diagonal(d), Vec{2, 8});
    CHECK(x[0] == doctest::Approx(1));
    CHECK(x[1] == doctest::Approx(2));
    const SymMatrix m{{4, 2}, {2, 3}};
    const auto y = spd_solve(m, Vec{8, 7});
    CHECK(y[0] == doctest::Approx(1.25));
    CHECK(y[1] == doctest::Approx(1.5));
    const auto back = m * y;
    CHECK(back[0] == doctest::Approx(8));
    CHECK(back[1] == doctest::Approx(7));
    CHECK_THROWS_AS(spd_solve(m, Vec{1, 2, 3}), DimensionMismatch);
}

TEST_CASE("spd_inverse and pseudo_inverse agree on SPD input") {
    RngStream rng(3, 1);
    const auto m = random_spd(5, rng);
    const auto inv = spd_inverse(m);
    const auto pinv = pseudo_inverse(m);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(inv(i, j) == doctest::Approx(pinv(i, j)).epsilon(1e-8));
}

TEST_CASE("pseudo_inverse of a rank-one matrix") {
    SymMatrix m(2);
    m.add_outer(Vec{1, 1});
    const auto p = pseudo_inverse(m);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(p(i, j) == doctest::Approx(0.25));
}

TEST_CASE("eigenvalue_floor") {
    const Vec d{-0.5, 1.0};
    const auto [out, raised] = eigenvalue_floor(SymMatrix::diagonal(d), 1e-3);
    CHECK(raised);
    CHECK(out(0, 0) == doctest::Approx(1e-3));
    CHECK(out(1, 1) == doctest::Approx(1.0));
    const auto [same, none] = eigenvalue_floor(SymMatrix::identity(2), 1e-3);
    CHECK_FALSE(none);
    CHECK(same(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("sample_gaussian is deterministic per stream") {
    const Vec mean{1, 2};
    const SymMatrix cov{{2, 0.5}, {0.5, 1}};
    RngStream a(42, 7), b(42, 7);
    for (int i = 0; i < 10; ++i) CHECK(sample_gaussian(mean, cov, a) == sample_gaussian(mean, cov, b));
}

TEST_CASE("sample_gaussian moments") {
    constexpr int n = 100000;
    SUBCASE("zero mean, identity covariance") {
        RngStream rng(5, 0);
        double s0 = 0, s1 = 0;
        for (int i = 0; i < n; ++i) {
            const auto x = sample_gaussian(Vec{0, 0}, SymMatrix::identity(2), rng);
            s0 += x[0];
            s1 += x[1];
        }
        CHECK(std::abs(s0 / n) < 0.02);
        CHECK(std::abs(s1 / n) < 0.02);
    }
    SUBCASE("shifted mean, identity covariance") {
        RngStream rng(6, 0);
        std::vector<Vec> xs;
        xs.reserve(n);
        Vec mu{0, 0};
        for (int i = 0; i < n; ++i) {
            xs.push_back(sample_gaussian(Vec{1, 2}, SymMatrix::identity(2), rng));
            mu[0] += xs.back()[0] / n;
            mu[1] += xs.back()[1] / n;
        }
        double c00 = 0, c01 = 0, c11 = 0;
        for (const auto& x : xs) {
            c00 += (x[0] - mu[0]) * (x[0] - mu[0]);
            c01 += (x[0] - mu[0]) * (x[1] - mu[1]);
            c11 += (x[1] - mu[1]) * (x[1] - mu[1]);
        }
        CHECK(std::abs(c00 / (n - 1) - 1) < 0.05);
        CHECK(std::abs(c01 / (n - 1)) < 0.05);
        CHECK(std::abs(c11 / (n - 1) - 1) < 0.05);
    }
}

TEST_CASE("posterior_update with no data returns the prior") {
    const Vec mean{0.3, -1};
    const SymMatrix cov{{2, 0.5}, {0.5, 1}};
    const auto [m, c] = posterior_update(mean, cov, {}, {}, 1.0);
    CHECK(m[0] == doctest::Approx(0.3));
    CHECK(m[1] == doctest::Approx(-1));
    CHECK(c(0, 1) == doctest::Approx(0.5));
    CHECK(c(1, 1) == doctest::Approx(1));
}

TEST_CASE("scalar posterior closed form") {
    const auto [m, c] = posterior_update(Vec{0}, SymMatrix::identity(1), {Vec{1}, Vec{1}}, {2, 4}, 1.0);
    CHECK(m[0] == doctest::Approx(2.0));
    CHECK(c(0, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("posterior_update matches the gain form") {
    RngStream rng(9, 2);
    const std::size_t d = 4, n = 12;
    const auto prior_cov = random_spd(d, rng);
    Vec prior_mean(d);
    for (auto& x : prior_mean) x = rng.normal();
    std::vector<Vec> rows;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
        Vec r(d);
        for (auto& x : r) x = rng.normal();
        rows.push_back(r);
        y.push_back(rng.normal());
    }
    const double beta = 0.7;
    const auto [mean, cov] = posterior_update(prior_mean, prior_cov, rows, y, beta);

    // mean = m + S X^T (X S X^T + beta I)^{-1} (y - X m), cov = S - S X^T (.)^{-1} X S
    std::vector<Vec> sx(n);  // S x_i
    for (std::size_t i = 0; i < n; ++i) sx[i] = prior_cov * rows[i];
    SymMatrix innov(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) innov(i, j) = dot(rows[i], sx[j]) + (i == j ? beta : 0.0);
    const auto innov_inv = spd_inverse(innov);
    Vec resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - dot(rows[i], prior_mean);
    const Vec gain = innov_inv * resid;
    for (std::size_t a = 0; a < d; ++a) {
        double m = prior_mean[a];
        for (std::size_t i = 0; i < n; ++i) m += sx[i][a] * gain[i];
        CHECK(mean[a] == doctest::Approx(m).epsilon(1e-10));
        for (std::size_t b = 0; b < d; ++b) {
            double c = prior_cov(a, b);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) c -= sx[i][a] * innov_inv(i, j) * sx[j][b];
            CHECK(cov(a, b) == doctest::Approx(c).epsilon(1e-9));
        }
    }
}

TEST_CASE("posterior_update rejects bad shapes and noise") {
    CHECK_THROWS_AS(posterior_update(Vec{0}, SymMatrix::identity(1), {Vec{1, 2}}, {1}, 1.0), DimensionMismatch);
    CHECK_THROWS_AS(posterior_update(Vec{0}, SymMatrix::identity(1), {Vec{1}}, {1, 2}, 1.0), DimensionMismatch);
    CHECK_THROWS(posterior_update(Vec{0}, SymMatrix::identity(1), {Vec{1}}, {1}, 0.0));
}

TEST_CASE("posterior sample covariance") {
    const PreparedPrior prior(Vec{0, 0}, SymMatrix{{1, 0.3}, {0.3, 0.5}});
    SymMatrix gram(2);
    gram.add_outer(Vec{1, 2});
    const auto post = posterior_from_stats(prior, gram, Vec{0.5, 1.0}, 0.5);
    const auto cov = post.covariance();
    RngStream rng(1, 1);
    constexpr int n = 200000;
    double c00 = 0, c01 = 0, c11 = 0, m0 = 0, m1 = 0;
    for (int i = 0; i < n; ++i) {
        const auto x = post.sample(rng);
        const double a = x[0] - post.mean[0], b = x[1] - post.mean[1];
        m0 += a;
        m1 += b;
        c00 += a * a;
        c01 += a * b;
        c11 += b * b;
    }
    CHECK(std::abs(m0 / n) < 0.01);
    CHECK(std::abs(m1 / n) < 0.01);
    CHECK(c00 / n == doctest::Approx(cov(0, 0)).epsilon(0.02));
    CHECK(c01 / n == doctest::Approx(cov(0, 1)).epsilon(0.03));
    CHECK(c11 / n == doctest::Approx(cov(1, 1)).epsilon(0.02));
}
