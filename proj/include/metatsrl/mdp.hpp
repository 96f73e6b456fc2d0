#pragma once

// Tabular finite-horizon MDPs: representation, simulation and exact
// backward induction. Stages are 0-based in code (h = 0 .. H-1).

#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "metatsrl/linalg.hpp"
#include "metatsrl/rng.hpp"

namespace metatsrl {

/// One successor of a (stage, state, action) triple. `reward` is only read
/// when the triple's reward kind is Transition.
struct Outcome {
    int next_state = 0;
    double prob = 0.0;
    double reward = 0.0;

    bool operator==(const Outcome&) const = default;
};

struct RewardDist {
    enum class Kind { Bernoulli, Deterministic, Transition };

    Kind kind = Kind::Deterministic;
    /// Bernoulli success probability or the deterministic value.
    double param = 0.0;

    static RewardDist bernoulli(double p) { return {Kind::Bernoulli, p}; }
    static RewardDist deterministic(double v) { return {Kind::Deterministic, v}; }
    /// Reward carried by the sampled successor (like/dislike style feedback).
    static RewardDist transition() { return {Kind::Transition, 0.0}; }

    bool operator==(const RewardDist&) const = default;
};

/// Finite-horizon MDP with S states shared across stages, A actions and
/// horizon H. The last stage has no transition kernel. Actions can be
/// masked per (stage, state); a masked action is unavailable there.
class MdpSpec {
public:
    MdpSpec() = default;
    MdpSpec(int num_states, int num_actions, int horizon);

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    int horizon() const { return horizon_; }

    const Vec& initial() const { return initial_; }
    void set_initial(Vec dist) { initial_ = std::move(dist); }

    const std::vector<Outcome>& transition(int h, int s, int a) const {
        return transitions_[index(h, s, a)];
    }
    void set_transition(int h, int s, int a, std::vector<Outcome> outcomes);

    const RewardDist& reward(int h, int s, int a) const { return rewards_[index(h, s, a)]; }
    void set_reward(int h, int s, int a, RewardDist dist) { rewards_[index(h, s, a)] = dist; }

    /// Expected immediate reward.
    double mean_reward(int h, int s, int a) const;

    bool allowed(int h, int s, int a) const {
        return allowed_.empty() || allowed_[index(h, s, a)] != 0;
    }
    void set_allowed(int h, int s, int a, bool ok);
    bool has_mask() const { return !allowed_.empty(); }
    std::vector<int> allowed_actions(int h, int s) const;

    /// Throws InvalidMdp describing the first violated invariant.
    void validate() const;

    bool operator==(const MdpSpec&) const = default;

private:
    std::size_t index(int h, int s, int a) const {
        return (static_cast<std::size_t>(h) * num_states_ + s) * num_actions_ + a;
    }

    int num_states_ = 0;
    int num_actions_ = 0;
    int horizon_ = 0;
    Vec initial_;
    std::vector<std::vector<Outcome>> transitions_;  // stages 0..H-2
    std::vector<RewardDist> rewards_;
    std::vector<unsigned char> allowed_;
};

/// Optimal values. Q of a masked action is -infinity.
struct ValueTables {
    int num_states = 0;
    int num_actions = 0;
    std::vector<Vec> V;  ///< V[h][s]
    std::vector<Vec> Q;  ///< Q[h][s * A + a]

    double q(int h, int s, int a) const { return Q[h][static_cast<std::size_t>(s) * num_actions + a]; }
    /// Lowest-index maximizer of Q[h][s][.].
    int greedy(int h, int s) const;
};

struct Step {
    int stage;
    int state;
    int action;
    double reward;
};

struct Trajectory {
    std::vector<Step> steps;
    int episode_index = 0;

    int first_state() const { return steps.front().state; }
    double total_reward() const;
};

/// Exact backward induction; ties resolve to the lowest action index.
ValueTables solve_optimal(const MdpSpec& mdp);

using ActionCallback = std::function<int(int stage, int state)>;

/// One H-step episode. The initial state, rewards and successors are drawn
/// by inverse CDF from `rng`, with two uniforms per stage, so paired streams
/// give identical outcomes whenever the chosen actions coincide.
Trajectory simulate_episode(const MdpSpec& mdp, const ActionCallback& act, RngStream& rng,
                            int episode_index = 0);

/// V*_1(s_1) minus the realized reward sum.
double episode_regret(const ValueTables& oracle, const Trajectory& traj, const MdpSpec& mdp);

/// Value of a deterministic Markov policy, policy[h][s] -> action, by forward
/// propagation of the state distribution.
double evaluate_policy(const MdpSpec& mdp, const std::vector<std::vector<int>>& policy);

void to_json(nlohmann::json& j, const MdpSpec& mdp);
void from_json(const nlohmann::json& j, MdpSpec& mdp);

MdpSpec load_mdp(const std::string& path);
void save_mdp(const MdpSpec& mdp, const std::string& path);

}  // namespace metatsrl
