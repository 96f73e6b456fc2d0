#pragma once

// Cross-task prior learning: per-task OLS estimates, the prior mean and
// covariance estimators, widening, and the meta-algorithm drivers.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metatsrl/agents.hpp"
#include "metatsrl/envs.hpp"

namespace metatsrl {

enum class OlsScope { Full, InitOnly };

/// Strict throws RankDeficient on a singular stage design; MinNorm falls
/// back to the pseudo-inverse (minimum-norm solution and beta * pinv(V)).
enum class RankPolicy { Strict, MinNorm };

struct OlsOptions {
    OlsScope scope = OlsScope::Full;
    bool bandit_targets = false;
    RankPolicy rank = RankPolicy::Strict;
    /// A design is singular when lambda_min(V) <= rank_tol * max(1, max diag).
    double rank_tol = 1e-10;
    /// Multiplier of V^{-1} in sigma_ddot.
    double beta = 1.0;
};

struct TaskEstimate {
    std::vector<Vec> theta;            ///< per stage
    std::vector<SymMatrix> sigma;      ///< beta (Phi^T Phi)^{-1}, InitOnly scope only
    int episodes_used = 0;
    std::vector<int> deficient_stages; ///< stages solved by the MinNorm fallback
};

/// Backward OLS recursion over the first `episodes_used` logged episodes
/// (all of them for Full scope, the warm start for InitOnly):
/// theta_h = V_h^{-1} Phi^T b, with targets backed up through theta_{h+1}.
TaskEstimate ols_task_estimate(const std::vector<Trajectory>& log, int init_length, const MdpSpec& env,
                               const FeatureMap& fmap, const OlsOptions& options);

/// Arithmetic mean. Throws EmptyList.
Vec prior_mean_estimate(const std::vector<Vec>& estimates);

/// (1/(n-1)) sum (t_i - mean)(t_i - mean)^T - (1/n) sum sigma_i over n
/// source tasks; symmetrized, possibly indefinite. Throws TooFewTasks when
/// n < 3.
SymMatrix prior_cov_estimate(const std::vector<Vec>& theta_ddots, const std::vector<SymMatrix>& sigma_ddots);

struct WidenResult {
    SymMatrix cov;
    bool floored = false;
};

/// cov + w I, then eigenvalues below eps raised to eps.
WidenResult widen(const SymMatrix& cov, double w, double eps = 1e-9);

/// Constants of the theoretical exploration lengths.
struct TheoryConstants {
    double c1 = 1.0, c2 = 1.0, c3 = 1.0;
    double lambda0 = 1.0;
};

struct MetaConfig {
    int K = 1;
    int N = 1;
    std::optional<int> K0;  ///< nullopt: Auto (or theory, if set)
    std::optional<int> K1;
    std::optional<TheoryConstants> theory;
    double w = 1.0;
    AgentConfig agent;
    bool paired_oracle_seeds = true;
    /// Covariance-estimator source tasks include the exploration epochs.
    bool cov_includes_exploration = true;
    RankPolicy ols_rank = RankPolicy::MinNorm;
    std::optional<int> n1;  ///< accepted and ignored
    bool record_trajectories = false;
};

/// max(2, ceil(H^2 / 4)), clamped to K.
int auto_k0(int horizon, int K);
/// max(3, K0), clamped to K.
int auto_k1(int k0, int K);
/// 4 c1^2 H^2 M Ne^2 ln(2 M K^2 N) ln(2 K N), Ne = lambda_e / lambda0.
double theory_k0(const TheoryConstants& c, int H, int M, int K, int N, double lambda_e);
/// max(K0, 64 c2^2 H^2 Ne^2 ln^3(2 M K^2 N), c3^2 N^2 H^2 ln^3(2 K^2 N)).
double theory_k1(const TheoryConstants& c, int H, int M, int K, int N, double lambda_e);

int resolve_k0(const MetaConfig& cfg, int H, int M);
int resolve_k1(const MetaConfig& cfg, int H, int M);

/// Learned prior handed to TSRL+ on one task.
struct LearnedPrior {
    GaussianPrior prior;
    std::vector<SymMatrix> cov;  ///< unwidened covariance estimate (MTSRL+ only)
    int k_used = 0;
    bool floored = false;
};

struct TaskRecord {
    int task = 0;  ///< 1-based
    std::string mode;  ///< exploration, learned or oracle
    std::vector<double> rewards;
    double oracle_value = 0.0;  ///< expected V*_1 under the initial distribution
    std::vector<double> oracle_values;  ///< V*_1(s_n1) per episode
    int init_length = 0;
    bool init_completed = true;
    std::vector<std::string> warnings;
    std::string error;
    int k_used = 0;
    bool cov_floored = false;
    std::vector<Vec> prior_mean;   ///< theta-hat used, learned mode only
    std::vector<Vec> estimate;     ///< theta-dot (MTSRL) or theta-ddot (MTSRL+) of this task
    std::vector<int> deficient_stages;
    std::optional<TaskRunResult> run;
};

struct MetaRunReport {
    std::string algorithm;
    int K = 0, N = 0, H = 0, K0 = 0, K1 = 0;
    std::vector<TaskRecord> tasks;
};

nlohmann::json report_to_json(const MetaRunReport& report);

/// Hook replacing the learned prior at task k (1-based), used for
/// alignment checks.
using PriorOverride = std::function<std::optional<GaussianPrior>(int k)>;

/// Task k uses rng.child(k), so reports sharing `rng` see the same tasks'
/// randomness.
MetaRunReport run_mtsrl(const MetaConfig& cfg, const std::vector<SymMatrix>& true_prior_cov,
                        const TaskSource& tasks, const RngStream& rng);
MetaRunReport run_mtsrl_plus(const MetaConfig& cfg, const TaskSource& tasks, const RngStream& rng,
                             const PriorOverride& override_prior = {});
MetaRunReport run_meta_oracle(const MetaConfig& cfg, const GaussianPrior& true_prior,
                              const TaskSource& tasks, const RngStream& rng);
/// K independent RLSVI tasks.
MetaRunReport run_rlsvi_meta(const MetaConfig& cfg, const TaskSource& tasks, const RngStream& rng);
/// MTSRL+ structure with bandit targets everywhere (MTSBD).
MetaRunReport run_tsbd_meta(const MetaConfig& cfg, const TaskSource& tasks, const RngStream& rng);
/// TSRL with the true prior and no warm start.
MetaRunReport run_tsrl_true_prior(const MetaConfig& cfg, const GaussianPrior& true_prior,
                                  const TaskSource& tasks, const RngStream& rng);

}  // namespace metatsrl
