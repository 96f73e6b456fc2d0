#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "metatsrl/errors.hpp"
#include "metatsrl/meta.hpp"
#include "support.hpp"

using namespace metatsrl;

namespace {

/// S = 2, A = 2, H = 2 deterministic MDP where action a moves to state a.
MdpSpec steer(const std::vector<double>& r) {
    MdpSpec m(2, 2, 2);
    m.set_initial({0.5, 0.5});
    int i = 0;
    for (int h = 0; h < 2; ++h)
        for (int s = 0; s < 2; ++s)
            for (int a = 0; a < 2; ++a) {
                m.set_reward(h, s, a, RewardDist::deterministic(r[i++]));
                if (h == 0) m.set_transition(h, s, a, {{a, 1.0, 0.0}});
            }
    return m;
}

/// Every (s0, a0, a1) path through steer().
std::vector<Trajectory> all_paths(const MdpSpec& m) {
    std::vector<Trajectory> out;
    for (int s = 0; s < 2; ++s)
        for (int a0 = 0; a0 < 2; ++a0)
            for (int a1 = 0; a1 < 2; ++a1)
                out.push_back({{{0, s, a0, m.mean_reward(0, s, a0)}, {1, a0, a1, m.mean_reward(1, a0, a1)}},
                               static_cast<int>(out.size()) + 1});
    return out;
}

MdpSpec single_arm(int H) {
    MdpSpec m(1, 1, H);
    m.set_initial({1.0});
    for (int h = 0; h < H; ++h) {
        m.set_reward(h, 0, 0, RewardDist::bernoulli(0.5));
        if (h + 1 < H) m.set_transition(h, 0, 0, {{0, 1.0, 0.0}});
    }
    return m;
}

std::shared_ptr<SyntheticSource> synthetic_source(std::uint64_t seed, SyntheticParams p = {}) {
    RngStream rng(seed, 0);
    auto fam_rng = rng.child(0);
    auto family = std::make_shared<const SyntheticFamily>(SyntheticFamily::sample(p, fam_rng));
    return std::make_shared<SyntheticSource>(family, rng.child(1));
}

MetaConfig small_config(int K, int N) {
    MetaConfig c;
    c.K = K;
    c.N = N;
    c.agent.lambda = 0.2;
    c.agent.lambda_e = 1.0;
    c.agent.beta = BetaSchedule::constant(0.25);
    return c;
}

std::vector<double> task_totals(const MetaRunReport& r) {
    std::vector<double> out;
    for (const auto& t : r.tasks) {
        double s = 0.0;
        for (double x : t.rewards) s += x;
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST_CASE("ols recovers Q* on noiseless full-rank data") {
    RngStream rng(1, 0);
    std::vector<double> r(8);
    for (auto& x : r) x = rng.uniform();
    const auto m = steer(r);
    const auto f = tabular_features(2, 2);
    const auto est = ols_task_estimate(all_paths(m), 0, m, f, {});
    const auto q = solve_optimal(m);
    for (int h = 0; h < 2; ++h)
        for (int i = 0; i < 4; ++i) CHECK(est.theta[h][i] == doctest::Approx(q.Q[h][i]).epsilon(1e-12));
    CHECK(est.episodes_used == 8);
    CHECK(est.deficient_stages.empty());
    // Stage-0 estimate includes the backed-up successor value, not just the reward.
    CHECK(est.theta[0][0] - r[0] == doctest::Approx(q.V[1][0]));
}

TEST_CASE("one-dimensional ols is the sample mean") {
    const auto m = single_arm(1);
    const auto f = tabular_features(1, 1);
    const std::vector<Trajectory> log{{{{0, 0, 0, 0.2}}, 1}, {{{0, 0, 0, 0.8}}, 2}};
    const auto est = ols_task_estimate(log, 0, m, f, {});
    CHECK(est.theta[0][0] == doctest::Approx(0.5));
}

TEST_CASE("init-only scope uses the warm-start episodes and reports beta V^-1") {
    const auto m = single_arm(1);
    const auto f = tabular_features(1, 1);
    const std::vector<Trajectory> log{{{{0, 0, 0, 0.0}}, 1}, {{{0, 0, 0, 1.0}}, 2}, {{{0, 0, 0, 1.0}}, 3}};
    OlsOptions o;
    o.scope = OlsScope::InitOnly;
    o.beta = 0.5;
    const auto est = ols_task_estimate(log, 2, m, f, o);
    CHECK(est.episodes_used == 2);
    CHECK(est.theta[0][0] == doctest::Approx(0.5));
    CHECK(est.sigma[0](0, 0) == doctest::Approx(0.25));
    CHECK_THROWS(ols_task_estimate(log, 4, m, f, o));
}

TEST_CASE("rank-deficient designs") {
    MdpSpec m(1, 2, 1);
    m.set_initial({1.0});
    m.set_reward(0, 0, 0, RewardDist::bernoulli(0.5));
    m.set_reward(0, 0, 1, RewardDist::bernoulli(0.5));
    const auto f = tabular_features(1, 2);
    const std::vector<Trajectory> log{{{{0, 0, 0, 1.0}}, 1}, {{{0, 0, 0, 0.0}}, 2}};
    OlsOptions o;
    try {
        ols_task_estimate(log, 0, m, f, o);
        FAIL("expected RankDeficient");
    } catch (const RankDeficient& e) {
        CHECK(e.stage() == 0);
    }
    o.rank = RankPolicy::MinNorm;
    const auto est = ols_task_estimate(log, 0, m, f, o);
    CHECK(est.theta[0][0] == doctest::Approx(0.5));
    CHECK(est.theta[0][1] == 0.0);
    CHECK(est.deficient_stages == std::vector<int>{0});
}

TEST_CASE("prior mean estimate") {
    CHECK(prior_mean_estimate({Vec{0.3, 0.1}}) == Vec{0.3, 0.1});
    CHECK(prior_mean_estimate({Vec{1, 0}, Vec{3, 2}}) == Vec{2, 1});
    CHECK_THROWS_AS(prior_mean_estimate({}), EmptyList);
    CHECK_THROWS_AS(prior_mean_estimate({Vec{1}, Vec{1, 2}}), DimensionMismatch);
}

TEST_CASE("prior mean error shrinks at the 1/sqrt(k) rate") {
    RngStream rng(2, 0);
    const Vec mu{0.5, -0.2, 1.0};
    const SymMatrix cov{{0.3, 0.1, 0.0}, {0.1, 0.2, 0.0}, {0.0, 0.0, 0.1}};
    std::vector<double> lk, le;
    for (int k : {10, 20, 50, 100, 200, 500}) {
        double err = 0.0;
        constexpr int reps = 400;
        for (int r = 0; r < reps; ++r) {
            std::vector<Vec> xs;
            for (int i = 0; i < k; ++i) xs.push_back(sample_gaussian(mu, cov, rng));
            const auto m = prior_mean_estimate(xs);
            Vec d(3);
            for (int i = 0; i < 3; ++i) d[i] = m[i] - mu[i];
            err += norm2(d) / reps;
        }
        lk.push_back(std::log(k));
        le.push_back(std::log(err));
    }
    CHECK(std::abs(testing::ols_slope(lk, le) + 0.5) <= 0.15);
}

TEST_CASE("prior covariance estimate") {
    SUBCASE("zero scatter leaves minus the noise term") {
        const std::vector<Vec> t(4, Vec{1, 2});
        const std::vector<SymMatrix> s(4, SymMatrix::scaled_identity(2, 0.04));
        const auto c = prior_cov_estimate(t, s);
        CHECK(c(0, 0) == doctest::Approx(-0.04));
        CHECK(c(1, 1) == doctest::Approx(-0.04));
        CHECK(c(0, 1) == doctest::Approx(0.0));
    }
    SUBCASE("noiseless estimates give the unbiased sample covariance") {
        const std::vector<Vec> t{{0, 0}, {1, 2}, {2, 1}};
        const std::vector<SymMatrix> s(3, SymMatrix(2));
        const auto c = prior_cov_estimate(t, s);
        // mean (1, 1); deviations (-1,-1), (0, 1), (1, 0)
        CHECK(c(0, 0) == doctest::Approx(1.0));
        CHECK(c(1, 1) == doctest::Approx(1.0));
        CHECK(c(0, 1) == doctest::Approx(0.5));
    }
    SUBCASE("needs three tasks") {
        CHECK_THROWS_AS(prior_cov_estimate({Vec{1}, Vec{2}}, {SymMatrix(1), SymMatrix(1)}), TooFewTasks);
        CHECK_THROWS_AS(prior_cov_estimate({Vec{1}, Vec{2}, Vec{3}}, {SymMatrix(1)}), DimensionMismatch);
    }
}

TEST_CASE("widen") {
    const SymMatrix spd{{2, 0.5}, {0.5, 1}};
    const auto same = widen(spd, 0.0);
    CHECK(same.cov == spd);
    CHECK_FALSE(same.floored);
    const Vec d{-0.5, 1.0};
    const auto shifted = widen(SymMatrix::diagonal(d), 1.0);
    CHECK(shifted.cov(0, 0) == doctest::Approx(0.5));
    CHECK(shifted.cov(1, 1) == doctest::Approx(2.0));
    CHECK_FALSE(shifted.floored);
    const Vec bad{-3.0, 1.0};
    const auto floored = widen(SymMatrix::diagonal(bad), 1.0);
    CHECK(floored.floored);
    CHECK(floored.cov(0, 0) == doctest::Approx(1e-9));
    CHECK_NOTHROW(cholesky(floored.cov));
    CHECK_THROWS(widen(spd, -1.0));
}

TEST_CASE("exploration lengths") {
    CHECK(auto_k0(3, 40) == 3);
    CHECK(auto_k0(5, 100) == 7);
    CHECK(auto_k0(1, 40) == 2);
    CHECK(auto_k0(5, 4) == 4);
    CHECK(auto_k1(3, 40) == 3);
    CHECK(auto_k1(2, 40) == 3);
    CHECK(auto_k1(7, 5) == 5);
    const TheoryConstants tc{1, 1, 1, 1};
    const double expect = 4.0 * 9 * 6 * 4.0 * std::log(2.0 * 6 * 100 * 50) * std::log(2.0 * 10 * 50);
    CHECK(theory_k0(tc, 3, 6, 10, 50, 2.0) == doctest::Approx(expect));
    CHECK(theory_k1(tc, 3, 6, 10, 50, 2.0) >= theory_k0(tc, 3, 6, 10, 50, 2.0));
    MetaConfig c;
    c.K = 10;
    c.N = 5;
    c.K0 = 11;
    CHECK_THROWS_AS(resolve_k0(c, 3, 6), ConfigError);
    c.K0 = 4;
    CHECK(resolve_k0(c, 3, 6) == 4);
    CHECK(resolve_k1(c, 3, 6) == 4);
    c.K0.reset();
    c.theory = tc;
    c.agent.lambda_e = 2.0;
    CHECK(resolve_k0(c, 3, 6) == 10);  // the theory value exceeds K
}

TEST_CASE("mtsrl uses the first task's estimate as the second task's prior mean") {
    const auto src = synthetic_source(3);
    MetaConfig c = small_config(2, 10);
    c.K0 = 1;
    const auto r = run_mtsrl(c, src->true_prior().covs, *src, RngStream(1, 1));
    REQUIRE(r.tasks.size() == 2);
    CHECK(r.tasks[0].mode == "exploration");
    CHECK(r.tasks[1].mode == "learned");
    CHECK(r.tasks[1].k_used == 1);
    CHECK(r.tasks[1].prior_mean == r.tasks[0].estimate);
}

TEST_CASE("full exploration reproduces independent rlsvi runs") {
    const auto src = synthetic_source(4);
    MetaConfig c = small_config(6, 8);
    const RngStream rng(2, 2);
    const auto rl = task_totals(run_rlsvi_meta(c, *src, rng));
    c.K0 = 6;
    CHECK(task_totals(run_mtsrl(c, src->true_prior().covs, *src, rng)) == rl);
    c.K0.reset();
    c.K1 = 6;
    CHECK(task_totals(run_mtsrl_plus(c, *src, rng)) == rl);
}

TEST_CASE("forcing the true prior reproduces the meta oracle exactly") {
    const auto src = synthetic_source(5);
    const MetaConfig c = small_config(8, 10);
    const RngStream rng(3, 3);
    const auto oracle = run_meta_oracle(c, src->true_prior(), *src, rng);
    const auto forced = run_mtsrl_plus(c, *src, rng, [&](int) { return src->true_prior(); });
    CHECK(task_totals(forced) == task_totals(oracle));
    for (std::size_t k = 0; k < oracle.tasks.size(); ++k) CHECK(forced.tasks[k].rewards == oracle.tasks[k].rewards);
}

TEST_CASE("unpaired oracle seeds change the draws") {
    const auto src = synthetic_source(6);
    MetaConfig c = small_config(4, 20);
    const RngStream rng(4, 4);
    const auto paired = run_meta_oracle(c, src->true_prior(), *src, rng);
    CHECK(task_totals(run_meta_oracle(c, src->true_prior(), *src, rng)) == task_totals(paired));
    c.paired_oracle_seeds = false;
    CHECK(task_totals(run_meta_oracle(c, src->true_prior(), *src, rng)) != task_totals(paired));
}

TEST_CASE("mtsrl+ learned priors") {
    const auto src = synthetic_source(7);
    MetaConfig c = small_config(10, 20);
    SUBCASE("default widening") {
        const auto r = run_mtsrl_plus(c, *src, RngStream(5, 5));
        CHECK(r.K1 == 3);
        for (const auto& t : r.tasks) {
            CHECK(t.error.empty());
            if (t.task > r.K1) {
                CHECK(t.mode == "learned");
                CHECK(t.k_used == t.task - 1);
            } else {
                CHECK(t.mode == "exploration");
            }
        }
    }
    SUBCASE("huge widening makes the prior uninformative") {
        c.w = 1e6;
        c.record_trajectories = true;
        const auto r = run_mtsrl_plus(c, *src, RngStream(5, 5));
        for (const auto& t : r.tasks)
            if (t.mode == "learned") CHECK(t.error.empty());
    }
    SUBCASE("fewer than three exploration tasks") {
        c.K1 = 2;
        CHECK_THROWS_AS(run_mtsrl_plus(c, *src, RngStream(5, 5)), TooFewTasks);
    }
}

TEST_CASE("tsbd meta uses bandit estimates") {
    const auto src = synthetic_source(9);
    const MetaConfig c = small_config(6, 15);
    const auto r = run_tsbd_meta(c, *src, RngStream(7, 7));
    CHECK(r.algorithm == "tsbd-meta");
    CHECK(r.tasks.size() == 6);
    for (const auto& t : r.tasks) CHECK(t.error.empty());
}

TEST_CASE("oracle mean regret is within noise of rlsvi or better") {
    double diff = 0.0, diff2 = 0.0;
    constexpr int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        const auto src = synthetic_source(100 + s);
        const MetaConfig c = small_config(10, 30);
        const RngStream rng(s, 0);
        const auto o = run_meta_oracle(c, src->true_prior(), *src, rng);
        const auto b = run_rlsvi_meta(c, *src, rng);
        double d = 0.0;
        for (std::size_t k = 0; k < o.tasks.size(); ++k)
            for (std::size_t n = 0; n < o.tasks[k].rewards.size(); ++n)
                d += (o.tasks[k].oracle_values[n] - o.tasks[k].rewards[n]) -
                     (b.tasks[k].oracle_values[n] - b.tasks[k].rewards[n]);
        d /= c.K;
        diff += d;
        diff2 += d * d;
    }
    const double mean = diff / seeds;
    const double se = std::sqrt(std::max(0.0, diff2 / seeds - mean * mean) / (seeds - 1));
    CHECK(mean <= 3 * se);
}

TEST_CASE("mtsrl prior mean error decreases with k in the median") {
    const std::vector<int> checkpoints{4, 8, 16, 32, 60};
    std::vector<std::vector<double>> errs(checkpoints.size());
    for (int seed = 0; seed < 10; ++seed) {
        const auto src = synthetic_source(200 + seed);
        MetaConfig c = small_config(60, 30);
        const auto r = run_mtsrl(c, src->true_prior().covs, *src, RngStream(seed, 9));
        for (std::size_t i = 0; i < checkpoints.size(); ++i) {
            const auto& t = r.tasks[checkpoints[i] - 1];
            REQUIRE(t.mode == "learned");
            double e2 = 0.0;
            for (int h = 0; h < r.H; ++h)
                for (std::size_t j = 0; j < t.prior_mean[h].size(); ++j) {
                    const double d = t.prior_mean[h][j] - src->true_prior().means[h][j];
                    e2 += d * d;
                }
            errs[i].push_back(std::sqrt(e2));
        }
    }
    std::vector<double> medians;
    for (auto& e : errs) {
        std::sort(e.begin(), e.end());
        medians.push_back(0.5 * (e[4] + e[5]));
    }
    for (std::size_t i = 1; i < medians.size(); ++i) CHECK(medians[i] <= medians[i - 1]);
}

TEST_CASE("meta run json") {
    const auto src = synthetic_source(10);
    const auto r = run_rlsvi_meta(small_config(2, 3), *src, RngStream(1, 0));
    const auto j = report_to_json(r);
    CHECK(j["schema"] == "metatsrl.meta_run/1");
    CHECK(j["tasks"].size() == 2);
    CHECK(j["tasks"][0]["rewards"].size() == 3);
}
