#pragma once

// Task generators: synthetic tabular families with a Gaussian Q*-prior and
// the sequential recommendation environment with logistic likes.

#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "metatsrl/agents.hpp"
#include "metatsrl/features.hpp"
#include "metatsrl/mdp.hpp"

namespace metatsrl {

/// One sampled task with its regret oracle.
struct Task {
    MdpSpec mdp;
    ValueTables oracle;
    /// Ground-truth parameters: the drawn theta (synthetic) or the projection
    /// of Q* onto the features (recommendation).
    std::vector<Vec> theta;
    double residual = 0.0;
    int clipped = 0;
    int reward_count = 0;
    /// Expected V*_1 under the initial distribution.
    double expected_value() const;
};

/// Deterministic task sequence of one experiment instance.
class TaskSource {
public:
    virtual ~TaskSource() = default;
    virtual const FeatureMap& features() const = 0;
    virtual int horizon() const = 0;
    virtual const GaussianPrior& true_prior() const = 0;
    /// Task k (1-based); the same k always gives the same task.
    virtual Task task(int k) const = 0;
};

// ---------------------------------------------------------------- synthetic

struct SyntheticParams {
    int num_states = 3;
    int num_actions = 2;
    int horizon = 3;
    /// Base-MDP mean rewards are uniform on [reward_low, reward_high].
    double reward_low = 0.3;
    double reward_high = 0.7;
    /// Prior covariance sigma^2 I at every stage.
    double sigma = 0.05;
    /// Transition rows are (1 - mix) Dirichlet(1) + mix uniform.
    double transition_mix = 0.5;
};

/// Tabular family sharing transitions and initial distribution. The prior
/// mean is Q* of a base MDP; a task draws theta_h ~ N(theta*_h, Sigma*_h)
/// and realizes it through mean rewards
///   r_H(s,a) = theta_H(s,a),
///   r_h(s,a) = theta_h(s,a) - sum_s' P(s'|s,a) max_a' theta_{h+1}(s',a'),
/// clipped to [0, 1], so that Q* of the task equals theta up to clipping.
class SyntheticFamily {
public:
    SyntheticFamily(MdpSpec base, GaussianPrior prior);

    /// Transition rows mixing a uniform draw on the simplex with the uniform
    /// distribution, uniform initial distribution, Bernoulli rewards with
    /// uniform means.
    static SyntheticFamily sample(const SyntheticParams& params, RngStream& rng);

    const MdpSpec& base() const { return base_; }
    const GaussianPrior& true_prior() const { return prior_; }
    const FeatureMap& features() const { return fmap_; }

private:
    MdpSpec base_;
    GaussianPrior prior_;
    FeatureMap fmap_;
};

/// Draws theta from the prior and builds the task MDP and its oracle.
Task sample_synthetic_task(const SyntheticFamily& family, RngStream& rng);

/// Builds the task realizing a given theta.
Task synthetic_task_from_theta(const SyntheticFamily& family, std::vector<Vec> theta);

class SyntheticSource : public TaskSource {
public:
    /// Task k draws from rng.child(k).
    SyntheticSource(std::shared_ptr<const SyntheticFamily> family, RngStream rng);

    const FeatureMap& features() const override { return family_->features(); }
    int horizon() const override { return family_->base().horizon(); }
    const GaussianPrior& true_prior() const override { return family_->true_prior(); }
    Task task(int k) const override;

private:
    std::shared_ptr<const SyntheticFamily> family_;
    RngStream rng_;
};

// ----------------------------------------------------------- recommendation

struct RecommendationTask {
    int products = 0;
    double c = 1.0;
    std::vector<Vec> gamma;  ///< gamma[a][n]
    Vec beta_a;              ///< all zeros by default

    static RecommendationTask sample(int products, double c, RngStream& rng);
};

void to_json(nlohmann::json& j, const RecommendationTask& t);
void from_json(const nlohmann::json& j, RecommendationTask& t);

/// Customer state: signs of observed products plus this episode's
/// recommendations.
struct RecState {
    std::vector<int> x;
    std::vector<int> recommended;

    static RecState cold(int products) { return {std::vector<int>(products, 0), {}}; }
};

double like_probability(const RecommendationTask& task, std::span<const int> x, int a);
inline double like_probability(const RecommendationTask& task, const RecState& s, int a) {
    return like_probability(task, s.x, a);
}

struct RecStepResult {
    int reward;
    RecState next;
};

/// Draws a like with one uniform. Throws RepeatedRecommendation.
RecStepResult recommendation_step(const RecommendationTask& task, const RecState& state, int a, RngStream& rng);

/// Number of start-of-stage states, sum_{h < H} C(P, h) 2^h.
long long recommendation_state_count(int products, int horizon);

/// Enumerated state table of the recommendation model, shared by every
/// task with the same (P, H). State 0 is the cold start; states are
/// grouped by stage (number of observed products).
class RecommendationSpace {
public:
    RecommendationSpace(int products, int horizon, long long budget = 1000000,
                        std::optional<double> lambda0_bound = std::nullopt);

    int products() const { return products_; }
    int horizon() const { return horizon_; }
    int num_states() const { return static_cast<int>(states_.size()); }
    const std::vector<int>& state(int s) const { return states_[s]; }
    int stage_of(int s) const { return stage_[s]; }
    /// Index of a sign vector, or -1.
    int index_of(std::span<const int> x) const;
    const FeatureMap& features() const { return fmap_; }

    /// Exact MDP of a task: stage-h states with allowed actions being the
    /// unobserved products, like/dislike successors, reward 1 per like.
    MdpSpec exact_mdp(const RecommendationTask& task) const;

    /// Min-norm least-squares projection of Q*_h onto the features over
    /// stage-h states and their allowed actions. Returns theta per stage and
    /// writes the residual norm.
    std::vector<Vec> project(const ValueTables& q, double* residual = nullptr) const;

private:
    std::uint64_t code(std::span<const int> x) const;

    int products_;
    int horizon_;
    std::vector<std::vector<int>> states_;
    std::vector<int> stage_;
    std::unordered_map<std::uint64_t, int> index_;
    std::vector<std::vector<int>> successors_;  // [s * P + a] -> {like, dislike}
    FeatureMap fmap_;
    std::vector<SymMatrix> gram_pinv_;  // per stage
};

/// Enumerates the task's MDP; throws BudgetExceeded with the state count.
MdpSpec recommendation_exact_mdp(const RecommendationTask& task, int horizon, long long budget = 1000000);

/// Projected parameters of the task's exact Q*.
std::vector<Vec> true_theta_from_gamma(const RecommendationTask& task, const RecommendationSpace& space,
                                       double* residual = nullptr);

/// Gaussian fit of projected parameters over `samples` tasks: sample mean
/// and unbiased sample covariance with eigenvalues floored at `floor`.
GaussianPrior fit_recommendation_prior(const RecommendationSpace& space, double c, int samples,
                                       RngStream& rng, double floor = 1e-6);

struct RecommendationParams {
    int products = 6;
    int horizon = 3;
    double c = 2.0;
    int prior_samples = 200;
    long long budget = 1000000;
};

class RecommendationSource : public TaskSource {
public:
    /// The oracle prior is fitted from rng.child(0); task k samples gamma
    /// from rng.child(k).
    RecommendationSource(std::shared_ptr<const RecommendationSpace> space, double c, int prior_samples,
                         RngStream rng);

    const FeatureMap& features() const override { return space_->features(); }
    int horizon() const override { return space_->horizon(); }
    const GaussianPrior& true_prior() const override { return prior_; }
    Task task(int k) const override;
    RecommendationTask gamma(int k) const;

private:
    std::shared_ptr<const RecommendationSpace> space_;
    double c_;
    RngStream rng_;
    GaussianPrior prior_;
};

}  // namespace metatsrl
