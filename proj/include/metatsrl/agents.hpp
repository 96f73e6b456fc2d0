#pragma once

// Per-task posterior-sampling agents over linear Q*-parameters:
// TSRL (known prior), TSRL+ (warm start until the Fisher information is
// well conditioned), RLSVI (TSRL+ with a conservative prior) and the
// myopic bandit variant TSBD.

#include <optional>
#include <string>
#include <vector>

#include "metatsrl/features.hpp"
#include "metatsrl/linalg.hpp"
#include "metatsrl/mdp.hpp"
#include "metatsrl/rng.hpp"

namespace metatsrl {

/// Noise schedule beta_n, indexed by the 1-based episode number.
struct BetaSchedule {
    enum class Kind { Theory, Linear, Constant };

    Kind kind = Kind::Constant;
    double param = 1.0;  ///< nu_bar, c0 or the constant value

    static BetaSchedule theory(double nu_bar) { return {Kind::Theory, nu_bar}; }
    static BetaSchedule linear(double c0) { return {Kind::Linear, c0}; }
    static BetaSchedule constant(double v) { return {Kind::Constant, v}; }

    /// Theory: 4 max(1, nu_bar) S H^3 ln(2 H S A n); Linear: c0 n; Constant: v.
    double at(int n, int num_states, int num_actions, int horizon) const;
};

/// Per-stage Gaussian prior N(means[h], covs[h]).
struct GaussianPrior {
    std::vector<Vec> means;
    std::vector<SymMatrix> covs;

    int horizon() const { return static_cast<int>(means.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }

    /// Zero mean, covariance (1/lambda) I at every stage.
    static GaussianPrior conservative(int horizon, int dim, double lambda);

    /// Checks shapes and that every covariance is SPD with smallest
    /// eigenvalue at least min_eigen.
    void validate(double min_eigen = 0.0) const;
};

struct AgentConfig {
    GaussianPrior prior;
    BetaSchedule beta = BetaSchedule::constant(1.0);
    double lambda_e = 0.0;
    /// Conservative prior is N(0, (1/lambda) I).
    double lambda = 1.0;
    /// Regression targets are immediate rewards only (TSBD).
    bool bandit_targets = false;
    /// Adds N(0, beta_n) noise to every regression target.
    bool target_noise = false;
    /// Optional cap on warm-start episodes; reaching it ends the warm start
    /// with a warning.
    std::optional<int> max_init_episodes;
    bool record_samples = true;
    bool record_posteriors = false;
};

double beta_n(const AgentConfig& config, int n, int num_states, int num_actions, int horizon);

struct PosteriorSnapshot {
    Vec mean;
    SymMatrix cov;
};

struct EpisodeOutcome {
    Trajectory trajectory;
    std::vector<Vec> sampled_params;  ///< theta-tilde per stage, when recorded
    std::optional<std::vector<PosteriorSnapshot>> posterior_snapshot;
    bool warm_start = false;
};

struct TaskRunResult {
    std::vector<EpisodeOutcome> episodes;
    /// Number of warm-start episodes run under the conservative prior.
    int init_length = 0;
    /// False when the eigenvalue condition was never met (the whole task
    /// ran under the conservative prior) or the cap stopped the warm start.
    bool init_completed = true;
    std::vector<std::string> warnings;

    std::vector<Trajectory> trajectories() const;
};

/// Logged episodes of one task plus the per-stage Fisher information
/// V_h = sum_i Phi_h(s_ih, a_ih)^T Phi_h(s_ih, a_ih).
class TaskHistory {
public:
    TaskHistory(const MdpSpec& env, const FeatureMap& fmap);

    void append(const Trajectory& traj);
    std::size_t size() const { return episodes_.size(); }
    const std::vector<Trajectory>& episodes() const { return episodes_; }
    const SymMatrix& fisher(int h) const { return fisher_[h]; }
    /// Allowed actions at (h, s), cached from the environment's mask.
    const std::vector<int>& actions(int h, int s) const {
        return actions_[static_cast<std::size_t>(h) * num_states_ + s];
    }

    /// True when lambda_min(V_h) >= lambda_e at every stage.
    bool fisher_condition(double lambda_e) const;

private:
    int num_states_;
    const FeatureMap* fmap_;
    std::vector<Trajectory> episodes_;
    std::vector<SymMatrix> fisher_;
    std::vector<std::vector<int>> actions_;
};

/// Regression targets of every logged episode at stage h:
/// b_ih = r_ih + max_a Phi_{h+1}(s_{i,h+1}, a) next_theta for h < H-1
/// (over allowed actions), and b_ih = r_ih at the last stage or when
/// bandit is set.
std::vector<double> stage_targets(const TaskHistory& history, const FeatureMap& fmap, int h,
                                  const Vec* next_theta, bool bandit);

/// Prior prepared for repeated posterior computations.
std::vector<PreparedPrior> prepare_prior(const GaussianPrior& prior);

/// One TSRL episode: backward pass h = H-1 .. 0 computing each stage's
/// posterior from the whole history, with targets formed from this
/// episode's freshly sampled theta-tilde of the next stage, then a greedy
/// forward rollout. `n` is the 1-based episode index.
EpisodeOutcome tsrl_episode(const TaskHistory& history, const std::vector<PreparedPrior>& prior,
                            const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                            int n, RngStream& agent_rng, RngStream& env_rng);

/// TSRL+ over N episodes. Episode n draws from rng.child({n, 0}) for the
/// agent and rng.child({n, 1}) for the environment, so two runs sharing
/// `rng` see identical environment noise.
TaskRunResult run_tsrl_plus(const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                            int episodes, const RngStream& rng);

/// TSRL+ with config.prior replaced by the conservative prior.
TaskRunResult run_rlsvi(const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                        int episodes, const RngStream& rng);

/// TSRL+ with immediate-reward targets.
TaskRunResult run_tsbd(const MdpSpec& env, const FeatureMap& fmap, const AgentConfig& config,
                       int episodes, const RngStream& rng);

nlohmann::json task_run_to_json(const TaskRunResult& result);

}  // namespace metatsrl
