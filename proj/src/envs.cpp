#include "metatsrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "metatsrl/errors.hpp"

namespace metatsrl {

double Task::expected_value() const {
    double v = 0.0;
    const Vec& init = mdp.initial();
    for (std::size_t s = 0; s < init.size(); ++s) v += init[s] * oracle.V[0][s];
    return v;
}

// ---------------------------------------------------------------- synthetic

SyntheticFamily::SyntheticFamily(MdpSpec base, GaussianPrior prior)
    : base_(std::move(base)), prior_(std::move(prior)),
      fmap_(tabular_features(base_.num_states(), base_.num_actions())) {
    base_.validate();
    if (prior_.horizon() != base_.horizon() || prior_.dim() != fmap_.dim())
        throw DimensionMismatch("synthetic prior does not match the base MDP");
    prior_.validate();
}

namespace {

// Q* of the base MDP laid out as tabular parameters.
std::vector<Vec> q_as_theta(const ValueTables& vt) { return vt.Q; }

}  // namespace

SyntheticFamily SyntheticFamily::sample(const SyntheticParams& p, RngStream& rng) {
    const int S = p.num_states, A = p.num_actions, H = p.horizon;
    if (!(p.reward_low >= 0.0 && p.reward_low <= p.reward_high && p.reward_high <= 1.0))
        throw Error("synthetic reward range must lie in [0, 1]");
    if (!(p.sigma > 0.0)) throw Error("synthetic sigma must be positive");
    if (!(p.transition_mix >= 0.0 && p.transition_mix <= 1.0)) throw Error("transition_mix must lie in [0, 1]");
    MdpSpec base(S, A, H);
    base.set_initial(Vec(S, 1.0 / S));
    for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                base.set_reward(h, s, a,
                                RewardDist::bernoulli(p.reward_low + (p.reward_high - p.reward_low) * rng.uniform()));
                if (h == H - 1) continue;
                // Uniform on the simplex: normalized unit exponentials.
                Vec e(S);
                double total = 0.0;
                for (double& v : e) {
                    v = -std::log1p(-rng.uniform());
                    total += v;
                }
                std::vector<Outcome> outs;
                for (int t = 0; t < S; ++t)
                    outs.push_back({t, (1.0 - p.transition_mix) * e[t] / total + p.transition_mix / S, 0.0});
                base.set_transition(h, s, a, std::move(outs));
            }
    GaussianPrior prior;
    prior.means = q_as_theta(solve_optimal(base));
    prior.covs.assign(H, SymMatrix::scaled_identity(static_cast<std::size_t>(S) * A, p.sigma * p.sigma));
    return SyntheticFamily(std::move(base), std::move(prior));
}

Task synthetic_task_from_theta(const SyntheticFamily& family, std::vector<Vec> theta) {
    const MdpSpec& base = family.base();
    const int S = base.num_states(), A = base.num_actions(), H = base.horizon();
    if (static_cast<int>(theta.size()) != H) throw DimensionMismatch("theta needs one vector per stage");
    Task task;
    task.mdp = base;
    for (int h = 0; h < H; ++h) {
        if (static_cast<int>(theta[h].size()) != S * A) throw DimensionMismatch("theta has the wrong dimension");
        Vec next_max(S, 0.0);
        if (h + 1 < H)
            for (int s = 0; s < S; ++s) {
                double m = -std::numeric_limits<double>::infinity();
                for (int a = 0; a < A; ++a) m = std::max(m, theta[h + 1][s * A + a]);
                next_max[s] = m;
            }
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                double r = theta[h][s * A + a];
                if (h + 1 < H)
                    for (const auto& o : base.transition(h, s, a)) r -= o.prob * next_max[o.next_state];
                ++task.reward_count;
                if (r < 0.0 || r > 1.0) {
                    ++task.clipped;
                    r = std::clamp(r, 0.0, 1.0);
                }
                task.mdp.set_reward(h, s, a, RewardDist::bernoulli(r));
            }
    }
    task.oracle = solve_optimal(task.mdp);
    task.theta = std::move(theta);
    return task;
}

Task sample_synthetic_task(const SyntheticFamily& family, RngStream& rng) {
    const GaussianPrior& prior = family.true_prior();
    std::vector<Vec> theta;
    for (int h = 0; h < prior.horizon(); ++h) theta.push_back(sample_gaussian(prior.means[h], prior.covs[h], rng));
    return synthetic_task_from_theta(family, std::move(theta));
}

SyntheticSource::SyntheticSource(std::shared_ptr<const SyntheticFamily> family, RngStream rng)
    : family_(std::move(family)), rng_(rng) {}

Task SyntheticSource::task(int k) const {
    RngStream r = rng_.child(static_cast<std::uint64_t>(k));
    return sample_synthetic_task(*family_, r);
}

// ----------------------------------------------------------- recommendation

RecommendationTask RecommendationTask::sample(int products, double c, RngStream& rng) {
    if (products < 1) throw Error("recommendation task needs at least one product");
    RecommendationTask t;
    t.products = products;
    t.c = c;
    t.gamma.assign(products, Vec(products, 0.0));
    for (auto& row : t.gamma)
        for (double& g : row) g = c * rng.normal();
    t.beta_a.assign(products, 0.0);
    return t;
}

void to_json(nlohmann::json& j, const RecommendationTask& t) {
    j = {{"products", t.products}, {"c", t.c}, {"gamma", t.gamma}, {"beta_a", t.beta_a}};
}

void from_json(const nlohmann::json& j, RecommendationTask& t) {
    t.products = j.at("products").get<int>();
    t.c = j.value("c", 1.0);
    t.gamma = j.at("gamma").get<std::vector<Vec>>();
    t.beta_a = j.contains("beta_a") ? j["beta_a"].get<Vec>() : Vec(t.products, 0.0);
    if (static_cast<int>(t.gamma.size()) != t.products || static_cast<int>(t.beta_a.size()) != t.products)
        throw DimensionMismatch("gamma must be products x products");
    for (const auto& row : t.gamma)
        if (static_cast<int>(row.size()) != t.products) throw DimensionMismatch("gamma must be products x products");
}

double like_probability(const RecommendationTask& task, std::span<const int> x, int a) {
    if (a < 0 || a >= task.products) throw DimensionMismatch("product index out of range");
    if (static_cast<int>(x.size()) != task.products) throw DimensionMismatch("state vector has wrong length");
    double logit = task.beta_a[a];
    for (int n = 0; n < task.products; ++n) logit += task.gamma[a][n] * x[n];
    return 1.0 / (1.0 + std::exp(-logit));
}

RecStepResult recommendation_step(const RecommendationTask& task, const RecState& state, int a, RngStream& rng) {
    if (std::find(state.recommended.begin(), state.recommended.end(), a) != state.recommended.end())
        throw RepeatedRecommendation(a);
    const double p = like_probability(task, state, a);
    const bool like = rng.uniform() < p;
    RecStepResult out{like ? 1 : 0, state};
    out.next.x[a] = like ? 1 : -1;
    out.next.recommended.push_back(a);
    return out;
}

long long recommendation_state_count(int products, int horizon) {
    long long total = 0;
    long long binom = 1;  // C(P, h)
    for (int h = 0; h < horizon; ++h) {
        if (h > products) break;
        const long double term = static_cast<long double>(binom) * std::ldexp(1.0L, h);
        if (term > 4e18L) return std::numeric_limits<long long>::max();
        total += static_cast<long long>(term);
        binom = binom * (products - h) / (h + 1);
    }
    return total;
}

RecommendationSpace::RecommendationSpace(int products, int horizon, long long budget,
                                         std::optional<double> lambda0_bound)
    : products_(products), horizon_(horizon) {
    if (products < 1 || horizon < 1) throw Error("recommendation space needs P, H >= 1");
    if (horizon > products) throw Error("horizon cannot exceed the number of products");
    if (products > 40) throw Error("at most 40 products are supported");
    const long long count = recommendation_state_count(products, horizon);
    if (count > budget) throw BudgetExceeded(count);

    states_.push_back(std::vector<int>(products, 0));
    stage_.push_back(0);
    index_[code(states_[0])] = 0;
    std::size_t begin = 0;
    for (int h = 1; h < horizon; ++h) {
        const std::size_t end = states_.size();
        for (std::size_t s = begin; s < end; ++s)
            for (int a = 0; a < products; ++a) {
                if (states_[s][a] != 0) continue;
                for (int sign : {1, -1}) {
                    std::vector<int> x = states_[s];
                    x[a] = sign;
                    const auto c = code(x);
                    if (index_.count(c)) continue;
                    index_[c] = static_cast<int>(states_.size());
                    states_.push_back(std::move(x));
                    stage_.push_back(h);
                }
            }
        begin = end;
    }
    const int S = num_states();
    successors_.assign(static_cast<std::size_t>(S) * products, {});
    for (int s = 0; s < S; ++s) {
        if (stage_[s] + 1 >= horizon) continue;
        for (int a = 0; a < products; ++a) {
            if (states_[s][a] != 0) continue;
            std::vector<int> x = states_[s];
            x[a] = 1;
            const int like = index_of(x);
            x[a] = -1;
            successors_[static_cast<std::size_t>(s) * products + a] = {like, index_of(x)};
        }
    }

    RecommendationBasis basis(products);
    fmap_ = recommendation_features(basis, states_, lambda0_bound);
    const int M = fmap_.dim();
    gram_pinv_.assign(horizon, SymMatrix(M));
    std::vector<SymMatrix> gram(horizon, SymMatrix(M));
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < products; ++a) {
            if (states_[s][a] != 0) continue;
            const auto& e = fmap_.row(stage_[s], s, a).entries;
            for (const auto& [i, x] : e)
                for (const auto& [j, y] : e) gram[stage_[s]](i, j) += x * y;
        }
    for (int h = 0; h < horizon; ++h) gram_pinv_[h] = pseudo_inverse(gram[h]);
}

std::uint64_t RecommendationSpace::code(std::span<const int> x) const {
    std::uint64_t c = 0;
    for (int v : x) c = c * 3 + static_cast<std::uint64_t>(v + 1);
    return c;
}

int RecommendationSpace::index_of(std::span<const int> x) const {
    if (static_cast<int>(x.size()) != products_) return -1;
    auto it = index_.find(code(x));
    return it == index_.end() ? -1 : it->second;
}

MdpSpec RecommendationSpace::exact_mdp(const RecommendationTask& task) const {
    if (task.products != products_) throw DimensionMismatch("task and space product counts differ");
    const int S = num_states(), P = products_, H = horizon_;
    MdpSpec mdp(S, P, H);
    for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < P; ++a) {
                const bool ok = stage_[s] == h && states_[s][a] == 0;
                if (!ok) {
                    mdp.set_allowed(h, s, a, false);
                    continue;
                }
                const double p = like_probability(task, states_[s], a);
                if (h == H - 1) {
                    mdp.set_reward(h, s, a, RewardDist::bernoulli(p));
                } else {
                    const auto& next = successors_[static_cast<std::size_t>(s) * P + a];
                    mdp.set_reward(h, s, a, RewardDist::transition());
                    mdp.set_transition(h, s, a, {{next[0], p, 1.0}, {next[1], 1.0 - p, 0.0}});
                }
            }
    return mdp;
}

std::vector<Vec> RecommendationSpace::project(const ValueTables& q, double* residual) const {
    const int S = num_states(), P = products_, M = fmap_.dim();
    std::vector<Vec> theta(horizon_);
    double sq = 0.0;
    for (int h = 0; h < horizon_; ++h) {
        Vec moment(M, 0.0);
        for (int s = 0; s < S; ++s) {
            if (stage_[s] != h) continue;
            for (int a = 0; a < P; ++a) {
                if (states_[s][a] != 0) continue;
                const double target = q.q(h, s, a);
                for (const auto& [i, x] : fmap_.row(h, s, a).entries) moment[i] += x * target;
            }
        }
        theta[h] = gram_pinv_[h] * moment;
        if (residual) {
            for (int s = 0; s < S; ++s) {
                if (stage_[s] != h) continue;
                for (int a = 0; a < P; ++a) {
                    if (states_[s][a] != 0) continue;
                    const double d = q.q(h, s, a) - fmap_.value(h, s, a, theta[h]);
                    sq += d * d;
                }
            }
        }
    }
    if (residual) *residual = std::sqrt(sq);
    return theta;
}

MdpSpec recommendation_exact_mdp(const RecommendationTask& task, int horizon, long long budget) {
    return RecommendationSpace(task.products, horizon, budget).exact_mdp(task);
}

std::vector<Vec> true_theta_from_gamma(const RecommendationTask& task, const RecommendationSpace& space,
                                       double* residual) {
    return space.project(solve_optimal(space.exact_mdp(task)), residual);
}

GaussianPrior fit_recommendation_prior(const RecommendationSpace& space, double c, int samples, RngStream& rng,
                                       double floor) {
    if (samples < 2) throw Error("prior fit needs at least two samples");
    const int H = space.horizon(), M = space.features().dim();
    std::vector<Vec> sum(H, Vec(M, 0.0));
    std::vector<std::vector<Vec>> draws(H);
    for (int i = 0; i < samples; ++i) {
        RngStream r = rng.child(static_cast<std::uint64_t>(i));
        const auto theta = true_theta_from_gamma(RecommendationTask::sample(space.products(), c, r), space);
        for (int h = 0; h < H; ++h) draws[h].push_back(theta[h]);
    }
    GaussianPrior prior;
    for (int h = 0; h < H; ++h) {
        Vec mean(M, 0.0);
        for (const auto& t : draws[h]) axpy(1.0 / samples, t, mean);
        SymMatrix cov(M);
        for (const auto& t : draws[h]) {
            Vec d = t;
            axpy(-1.0, mean, d);
            cov.add_outer(d, 1.0 / (samples - 1));
        }
        prior.means.push_back(std::move(mean));
        prior.covs.push_back(eigenvalue_floor(cov, floor).first);
    }
    return prior;
}

RecommendationSource::RecommendationSource(std::shared_ptr<const RecommendationSpace> space, double c,
                                           int prior_samples, RngStream rng)
    : space_(std::move(space)), c_(c), rng_(rng) {
    RngStream fit = rng_.child(0);
    prior_ = fit_recommendation_prior(*space_, c_, prior_samples, fit);
}

RecommendationTask RecommendationSource::gamma(int k) const {
    RngStream r = rng_.child(static_cast<std::uint64_t>(k));
    return RecommendationTask::sample(space_->products(), c_, r);
}

Task RecommendationSource::task(int k) const {
    if (k < 1) throw Error("task index is 1-based");
    Task t;
    t.mdp = space_->exact_mdp(gamma(k));
    t.oracle = solve_optimal(t.mdp);
    t.theta = space_->project(t.oracle, &t.residual);
    return t;
}

}  // namespace metatsrl
