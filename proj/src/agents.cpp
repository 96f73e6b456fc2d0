#include "metatsrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "metatsrl/errors.hpp"

namespace metatsrl {

double BetaSchedule::at(int n, int num_states, int num_actions, int horizon) const {
    if (n < 1) throw Error("beta_n needs n >= 1");
    switch (kind) {
        case Kind::Theory: {
            const double S = num_states, A = num_actions, H = horizon;
            return 4.0 * std::max(1.0, param) * S * H * H * H * std::log(2.0 * H * S * A * n);
        }
        case Kind::Linear:
            return param * n;
        case Kind::Constant:
            return param;
    }
    throw Error("unknown beta schedule");
}

double beta_n(const AgentConfig& config, int n, int num_states, int num_actions, int horizon) {
    const double b = config.beta.at(n, num_states, num_actions, horizon);
    if (!(b > 0.0) || !std::isfinite(b)) throw Error("beta schedule produced a non-positive value");
    return b;
}

GaussianPrior GaussianPrior::conservative(int horizon, int dim, double lambda) {
    if (!(lambda > 0.0)) throw Error("conservative prior needs lambda > 0");
    GaussianPrior p;
    p.means.assign(horizon, Vec(dim, 0.0));
    p.covs.assign(horizon, SymMatrix::scaled_identity(dim, 1.0 / lambda));
    return p;
}

void GaussianPrior::validate(double min_eigen) const {
    if (means.size() != covs.size()) throw DimensionMismatch("prior needs one covariance per stage");
    if (means.empty()) throw DimensionMismatch("prior has no stages");
    const std::size_t M = means.front().size();
    for (std::size_t h = 0; h < means.size(); ++h) {
        if (means[h].size() != M || covs[h].dim() != M)
            throw DimensionMismatch("prior stage " + std::to_string(h) + " has the wrong dimension");
        for (double v : means[h])
            if (!std::isfinite(v)) throw Error("prior mean has a non-finite entry");
        cholesky(covs[h]);
        if (min_eigen > 0.0 && min_eigenvalue(covs[h]) < min_eigen)
            throw NotPositiveDefinite("prior covariance at stage " + std::to_string(h) +
                                      " is below the eigenvalue bound");
    }
}

std::vector<Trajectory> TaskRunResult::trajectories() const {
    std::vector<Trajectory> out;
    out.reserve(episodes.size());
    for (const auto& e : episodes) out.push_back(e.trajectory);
    return out;
}

TaskHistory::TaskHistory(const MdpSpec& env, const FeatureMap& fmap)
    : num_states_(env.num_states()), fmap_(&fmap) {
    if (fmap.num_states() != env.num_states() || fmap.num_actions() != env.num_actions())
        throw DimensionMismatch("feature map does not match the environment");
    fisher_.assign(env.horizon(), SymMatrix(fmap.dim()));
    actions_.reserve(static_cast<std::size_t>(env.horizon()) * num_states_);
    for (int h = 0; h < env.horizon(); ++h)
        for (int s = 0; s < num_states_; ++s) actions_.push_back(env.allowed_actions(h, s));
}

void TaskHistory::append(const Trajectory& traj) {
    if (traj.steps.size() != fisher_.size()) throw DimensionMismatch("trajectory length differs from horizon");
    for (const auto& st : traj.steps) {
        const auto& entries = fmap_->row(st.stage, st.state, st.action).entries;
        SymMatrix& V = fisher_[st.stage];
        for (const auto& [i, x] : entries)
            for (const auto& [j, y] : entries) V(i, j) += x * y;
    }
    episodes_.push_back(traj);
}

bool TaskHistory::fisher_condition(double lambda_e) const {
    if (lambda_e <= 0.0) return true;
    for (const auto& V : fisher_) {
        // lambda_min <= every diagonal entry, so this test is exact.
        const Vec d = V.diag();
        if (*std::min_element(d.begin(), d.end()) < lambda_e) return false;
    }
    for (const auto& V : fisher_)
        if (min_eigenvalue(V) < lambda_e) return false;
    return true;
}

std::vector<double> stage_targets(const TaskHistory& history, const FeatureMap& fmap, int h,
                                  const Vec* next_theta, bool bandit) {
    std::vector<double> b;
    b.reserve(history.size());
    for (const auto& traj : history.episodes()) {
        double v = traj.steps[h].reward;
        if (!bandit && next_theta != nullptr && h + 1 < static_cast<int>(traj.steps.size())) {
            const int s_next = traj.steps[h + 1].state;
            v += max_value(fmap, *next_theta, h + 1, s_next, history.actions(h + 1, s_next));
        }
        b.push_back(v);
    }
    return b;
}

std::vector<PreparedPrior> prepare_prior(const GaussianPrior& prior) {
    std::vector<PreparedPrior> out;
    out.reserve(prior.means.size());
    for (std::size_t h = 0; h < prior.means.size(); ++h) out.emplace_back(prior.means[h], prior.covs[h]);
    return out;
}

namespace {

int argmax_action(const FeatureMap& fmap, const Vec& theta, int h, int s, const std::vector<int>& actions) {
    if (actions.empty()) throw EmptyMask();
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int a : actions) {
        const double v = fmap.value(h, s, a, theta);
        if (best < 0 || v > best_v || (v == best_v && a < best)) {
            best = a;
            best_v = v;
        }
    }
    return best;
}

}  // namespace

EpisodeOutcome tsrl_episode(const TaskHistory& history, const std::vector<PreparedPrior>& prior,
                            const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                            int n, RngStream& agent_rng, RngStream& env_rng) {
    const int H = env.horizon();
    const int M = fmap.dim();
    if (static_cast<int>(prior.size()) != H) throw DimensionMismatch("prior has the wrong number of stages");
    const double beta = beta_n(config, n, env.num_states(), env.num_actions(), H);

    EpisodeOutcome out;
    std::vector<Vec> theta(H);
    if (config.record_posteriors) out.posterior_snapshot.emplace(H);
    for (int h = H - 1; h >= 0; --h) {
        if (static_cast<int>(prior[h].dim()) != M) throw DimensionMismatch("prior dimension differs from features");
        std::vector<double> b = stage_targets(history, fmap, h, h + 1 < H ? &theta[h + 1] : nullptr,
                                              config.bandit_targets);
        if (config.target_noise) {
            const double sd = std::sqrt(beta);
            for (double& v : b) v += sd * agent_rng.normal();
        }
        Vec moment(M, 0.0);
        const auto& eps = history.episodes();
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const Step& st = eps[i].steps[h];
            for (const auto& [j, x] : fmap.row(h, st.state, st.action).entries) moment[j] += x * b[i];
        }
        PosteriorState post = posterior_from_stats(prior[h], history.fisher(h), moment, beta);
        theta[h] = post.sample(agent_rng);
        if (out.posterior_snapshot) (*out.posterior_snapshot)[h] = {post.mean, post.covariance()};
    }

    out.trajectory = simulate_episode(
        env, [&](int h, int s) { return argmax_action(fmap, theta[h], h, s, history.actions(h, s)); },
        env_rng, n);
    if (config.record_samples) out.sampled_params = std::move(theta);
    return out;
}

TaskRunResult run_tsrl_plus(const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                            int episodes, const RngStream& rng) {
    if (episodes < 0) throw Error("episode count must be nonnegative");
    if (config.lambda_e < 0.0) throw Error("lambda_e must be nonnegative");
    const int H = env.horizon();
    const auto main_prior = prepare_prior(config.prior);
    const auto warm_prior = prepare_prior(GaussianPrior::conservative(H, fmap.dim(), config.lambda));

    TaskHistory history(env, fmap);
    TaskRunResult result;
    result.episodes.reserve(episodes);
    bool warm = true;
    for (int n = 1; n <= episodes; ++n) {
        if (warm) {
            if (history.fisher_condition(config.lambda_e)) {
                warm = false;
                result.init_length = n - 1;
            } else if (config.max_init_episodes && n - 1 >= *config.max_init_episodes) {
                warm = false;
                result.init_length = n - 1;
                result.init_completed = false;
                result.warnings.push_back("warm start stopped at the cap of " +
                                          std::to_string(*config.max_init_episodes) +
                                          " episodes before the eigenvalue condition held");
            }
        }
        RngStream agent_rng = rng.child({static_cast<std::uint64_t>(n), 0});
        RngStream env_rng = rng.child({static_cast<std::uint64_t>(n), 1});
        EpisodeOutcome ep = tsrl_episode(history, warm ? warm_prior : main_prior, env, fmap, config, n,
                                         agent_rng, env_rng);
        ep.warm_start = warm;
        history.append(ep.trajectory);
        result.episodes.push_back(std::move(ep));
    }
    if (warm) {
        if (history.fisher_condition(config.lambda_e) && episodes > 0) {
            result.init_length = episodes;
        } else if (!(config.lambda_e <= 0.0)) {
            result.init_length = episodes;
            result.init_completed = false;
            result.warnings.push_back("InitNeverCompletes: eigenvalue condition not met within " +
                                      std::to_string(episodes) + " episodes");
        }
    }
    return result;
}

TaskRunResult run_rlsvi(const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                        int episodes, const RngStream& rng) {
    AgentConfig c = config;
    c.prior = GaussianPrior::conservative(env.horizon(), fmap.dim(), config.lambda);
    return run_tsrl_plus(env, fmap, c, episodes, rng);
}

TaskRunResult run_tsbd(const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                       int episodes, const RngStream& rng) {
    AgentConfig c = config;
    c.bandit_targets = true;
    return run_tsrl_plus(env, fmap, c, episodes, rng);
}

nlohmann::json task_run_to_json(const TaskRunResult& result) {
    nlohmann::json eps = nlohmann::json::array();
    for (std::size_t i = 0; i < result.episodes.size(); ++i) {
        const auto& e = result.episodes[i];
        nlohmann::json states = nlohmann::json::array(), actions = nlohmann::json::array(),
                       rewards = nlohmann::json::array();
        for (const auto& st : e.trajectory.steps) {
            states.push_back(st.state);
            actions.push_back(st.action);
            rewards.push_back(st.reward);
        }
        nlohmann::json je = {{"episode", e.trajectory.episode_index},
                             {"warm_start", e.warm_start},
                             {"states", states},
                             {"actions", actions},
                             {"rewards", rewards}};
        if (!e.sampled_params.empty()) je["sampled_params"] = e.sampled_params;
        eps.push_back(std::move(je));
    }
    return {{"schema", "metatsrl.task_run/1"},
            {"init_length", result.init_length},
            {"init_completed", result.init_completed},
            {"warnings", result.warnings},
            {"episodes", std::move(eps)}};
}

}  // namespace metatsrl
