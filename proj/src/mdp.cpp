#include "metatsrl/mdp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "metatsrl/errors.hpp"

namespace metatsrl {

namespace {

constexpr double kProbTol = 1e-9;

std::string where(int h, int s, int a) {
    std::ostringstream os;
    os << "(stage " << h << ", state " << s << ", action " << a << ")";
    return os.str();
}

}  // namespace

MdpSpec::MdpSpec(int num_states, int num_actions, int horizon)
    : num_states_(num_states), num_actions_(num_actions), horizon_(horizon) {
    if (num_states < 1 || num_actions < 1 || horizon < 1)
        throw InvalidMdp("MdpSpec needs S, A, H >= 1");
    const std::size_t stage_cells = static_cast<std::size_t>(num_states) * num_actions;
    initial_.assign(num_states, 0.0);
    initial_[0] = 1.0;
    transitions_.resize(stage_cells * (horizon - 1));
    rewards_.resize(stage_cells * horizon);
}

void MdpSpec::set_transition(int h, int s, int a, std::vector<Outcome> outcomes) {
    if (h < 0 || h >= horizon_ - 1) throw InvalidMdp("no transition kernel at stage " + std::to_string(h));
    transitions_[index(h, s, a)] = std::move(outcomes);
}

void MdpSpec::set_allowed(int h, int s, int a, bool ok) {
    if (allowed_.empty()) allowed_.assign(rewards_.size(), 1);
    allowed_[index(h, s, a)] = ok ? 1 : 0;
}

std::vector<int> MdpSpec::allowed_actions(int h, int s) const {
    std::vector<int> out;
    for (int a = 0; a < num_actions_; ++a)
        if (allowed(h, s, a)) out.push_back(a);
    return out;
}

double MdpSpec::mean_reward(int h, int s, int a) const {
    const RewardDist& r = reward(h, s, a);
    switch (r.kind) {
        case RewardDist::Kind::Bernoulli:
        case RewardDist::Kind::Deterministic:
            return r.param;
        case RewardDist::Kind::Transition: {
            double m = 0.0;
            for (const auto& o : transition(h, s, a)) m += o.prob * o.reward;
            return m;
        }
    }
    return 0.0;
}

void MdpSpec::validate() const {
    auto check_dist = [](const std::vector<double>& p, const std::string& what) {
        double total = 0.0;
        for (double v : p) {
            if (!(v >= 0.0)) throw InvalidMdp(what + ": negative probability");
            total += v;
        }
        if (std::abs(total - 1.0) > kProbTol) throw InvalidMdp(what + ": probabilities sum to " + std::to_string(total));
    };
    if (static_cast<int>(initial_.size()) != num_states_) throw InvalidMdp("initial distribution has wrong size");
    check_dist(initial_, "initial distribution");

    // dead[h][s]: no allowed action; such pairs must be unreachable.
    std::vector<std::vector<char>> dead(horizon_, std::vector<char>(num_states_, 0));
    for (int h = 0; h < horizon_; ++h)
        for (int s = 0; s < num_states_; ++s) dead[h][s] = allowed_actions(h, s).empty();
    for (int s = 0; s < num_states_; ++s)
        if (initial_[s] > 0.0 && dead[0][s])
            throw InvalidMdp("initial distribution reaches state " + std::to_string(s) + " with no allowed action");

    for (int h = 0; h < horizon_; ++h) {
        for (int s = 0; s < num_states_; ++s) {
            for (int a = 0; a < num_actions_; ++a) {
                if (!allowed(h, s, a)) continue;
                const RewardDist& r = reward(h, s, a);
                if (r.kind == RewardDist::Kind::Transition && h == horizon_ - 1)
                    throw InvalidMdp("transition-linked reward at terminal stage " + where(h, s, a));
                if (r.kind != RewardDist::Kind::Transition && !(r.param >= 0.0 && r.param <= 1.0))
                    throw InvalidMdp("reward mean outside [0,1] at " + where(h, s, a));
                if (h == horizon_ - 1) continue;
                const auto& outs = transition(h, s, a);
                if (outs.empty()) throw InvalidMdp("missing transition at " + where(h, s, a));
                std::vector<double> p;
                for (const auto& o : outs) {
                    if (o.next_state < 0 || o.next_state >= num_states_)
                        throw InvalidMdp("successor out of range at " + where(h, s, a));
                    if (r.kind == RewardDist::Kind::Transition && !(o.reward >= 0.0 && o.reward <= 1.0))
                        throw InvalidMdp("outcome reward outside [0,1] at " + where(h, s, a));
                    if (o.prob > 0.0 && dead[h + 1][o.next_state])
                        throw InvalidMdp("transition into state with no allowed action at " + where(h, s, a));
                    p.push_back(o.prob);
                }
                check_dist(p, "transition " + where(h, s, a));
            }
        }
    }
}

int ValueTables::greedy(int h, int s) const {
    int best = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < num_actions; ++a) {
        const double v = q(h, s, a);
        if (v > best_q) {
            best_q = v;
            best = a;
        }
    }
    return best;
}

double Trajectory::total_reward() const {
    double t = 0.0;
    for (const auto& st : steps) t += st.reward;
    return t;
}

ValueTables solve_optimal(const MdpSpec& mdp) {
    const int S = mdp.num_states(), A = mdp.num_actions(), H = mdp.horizon();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    ValueTables vt;
    vt.num_states = S;
    vt.num_actions = A;
    vt.V.assign(H, Vec(S, 0.0));
    vt.Q.assign(H, Vec(static_cast<std::size_t>(S) * A, kNegInf));
    for (int h = H - 1; h >= 0; --h) {
        for (int s = 0; s < S; ++s) {
            double best = kNegInf;
            for (int a = 0; a < A; ++a) {
                if (!mdp.allowed(h, s, a)) continue;
                double q = mdp.mean_reward(h, s, a);
                if (h < H - 1)
                    for (const auto& o : mdp.transition(h, s, a)) q += o.prob * vt.V[h + 1][o.next_state];
                vt.Q[h][static_cast<std::size_t>(s) * A + a] = q;
                if (q > best) best = q;
            }
            vt.V[h][s] = best == kNegInf ? 0.0 : best;
        }
    }
    return vt;
}

namespace {

int draw_index(const Vec& probs, double u) {
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_positive = static_cast<int>(i);
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return last_positive;
}

}  // namespace

Trajectory simulate_episode(const MdpSpec& mdp, const ActionCallback& act, RngStream& rng,
                            int episode_index) {
    const int H = mdp.horizon();
    Trajectory traj;
    traj.episode_index = episode_index;
    traj.steps.reserve(H);
    int s = draw_index(mdp.initial(), rng.uniform());
    for (int h = 0; h < H; ++h) {
        const double u_reward = rng.uniform();
        const double u_next = rng.uniform();
        const int a = act(h, s);
        if (a < 0 || a >= mdp.num_actions() || !mdp.allowed(h, s, a)) throw InvalidAction(h, s, a);
        const RewardDist& rd = mdp.reward(h, s, a);
        double r = 0.0;
        int next = s;
        if (h < H - 1) {
            const auto& outs = mdp.transition(h, s, a);
            double acc = 0.0;
            std::size_t pick = outs.size() - 1;
            for (std::size_t i = 0; i < outs.size(); ++i) {
                acc += outs[i].prob;
                if (u_next < acc && outs[i].prob > 0.0) {
                    pick = i;
                    break;
                }
            }
            next = outs[pick].next_state;
            if (rd.kind == RewardDist::Kind::Transition) r = outs[pick].reward;
        }
        if (rd.kind == RewardDist::Kind::Bernoulli) r = u_reward < rd.param ? 1.0 : 0.0;
        if (rd.kind == RewardDist::Kind::Deterministic) r = rd.param;
        traj.steps.push_back({h, s, a, r});
        s = next;
    }
    return traj;
}

double episode_regret(const ValueTables& oracle, const Trajectory& traj, const MdpSpec& mdp) {
    if (static_cast<int>(traj.steps.size()) != mdp.horizon())
        throw DimensionMismatch("trajectory length differs from horizon");
    return oracle.V[0][traj.first_state()] - traj.total_reward();
}

double evaluate_policy(const MdpSpec& mdp, const std::vector<std::vector<int>>& policy) {
    const int S = mdp.num_states(), H = mdp.horizon();
    Vec dist = mdp.initial();
    double value = 0.0;
    for (int h = 0; h < H; ++h) {
        Vec next(S, 0.0);
        for (int s = 0; s < S; ++s) {
            if (dist[s] == 0.0) continue;
            const int a = policy[h][s];
            if (!mdp.allowed(h, s, a)) throw InvalidAction(h, s, a);
            value += dist[s] * mdp.mean_reward(h, s, a);
            if (h < H - 1)
                for (const auto& o : mdp.transition(h, s, a)) next[o.next_state] += dist[s] * o.prob;
        }
        dist = std::move(next);
    }
    return value;
}

// -------------------------------------------------------------------- JSON

namespace {

nlohmann::json reward_json(const RewardDist& r) {
    switch (r.kind) {
        case RewardDist::Kind::Bernoulli:
            return {{"kind", "bernoulli"}, {"p", r.param}};
        case RewardDist::Kind::Deterministic:
            return {{"kind", "deterministic"}, {"value", r.param}};
        case RewardDist::Kind::Transition:
            return {{"kind", "transition"}};
    }
    return {};
}

RewardDist reward_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "bernoulli") return RewardDist::bernoulli(j.at("p").get<double>());
    if (kind == "deterministic") return RewardDist::deterministic(j.at("value").get<double>());
    if (kind == "transition") return RewardDist::transition();
    throw InvalidMdp("unknown reward kind '" + kind + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const MdpSpec& mdp) {
    const int S = mdp.num_states(), A = mdp.num_actions(), H = mdp.horizon();
    j = nlohmann::json::object();
    j["schema"] = "metatsrl.mdp/1";
    j["num_states"] = S;
    j["num_actions"] = A;
    j["horizon"] = H;
    j["initial"] = mdp.initial();
    auto stages = nlohmann::json::array();
    for (int h = 0; h < H; ++h) {
        nlohmann::json stage;
        auto rewards = nlohmann::json::array();
        auto trans = nlohmann::json::array();
        auto allowed = nlohmann::json::array();
        for (int s = 0; s < S; ++s) {
            auto rrow = nlohmann::json::array();
            auto trow = nlohmann::json::array();
            auto arow = nlohmann::json::array();
            for (int a = 0; a < A; ++a) {
                rrow.push_back(reward_json(mdp.reward(h, s, a)));
                arow.push_back(mdp.allowed(h, s, a));
                if (h < H - 1) {
                    auto outs = nlohmann::json::array();
                    const bool linked = mdp.reward(h, s, a).kind == RewardDist::Kind::Transition;
                    for (const auto& o : mdp.transition(h, s, a)) {
                        if (linked)
                            outs.push_back({o.next_state, o.prob, o.reward});
                        else
                            outs.push_back({o.next_state, o.prob});
                    }
                    trow.push_back(std::move(outs));
                }
            }
            rewards.push_back(std::move(rrow));
            allowed.push_back(std::move(arow));
            if (h < H - 1) trans.push_back(std::move(trow));
        }
        stage["rewards"] = std::move(rewards);
        if (h < H - 1) stage["transitions"] = std::move(trans);
        if (mdp.has_mask()) stage["allowed"] = std::move(allowed);
        stages.push_back(std::move(stage));
    }
    j["stages"] = std::move(stages);
}

void from_json(const nlohmann::json& j, MdpSpec& mdp) {
    const int S = j.at("num_states").get<int>();
    const int A = j.at("num_actions").get<int>();
    const int H = j.at("horizon").get<int>();
    MdpSpec out(S, A, H);
    out.set_initial(j.at("initial").get<Vec>());
    const auto& stages = j.at("stages");
    if (static_cast<int>(stages.size()) != H) throw InvalidMdp("stage count differs from horizon");
    for (int h = 0; h < H; ++h) {
        const auto& stage = stages[h];
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                out.set_reward(h, s, a, reward_from_json(stage.at("rewards").at(s).at(a)));
                if (stage.contains("allowed") && !stage["allowed"].at(s).at(a).get<bool>())
                    out.set_allowed(h, s, a, false);
                if (h < H - 1) {
                    std::vector<Outcome> outs;
                    for (const auto& o : stage.at("transitions").at(s).at(a)) {
                        Outcome oc{o.at(0).get<int>(), o.at(1).get<double>(), 0.0};
                        if (o.size() > 2) oc.reward = o.at(2).get<double>();
                        outs.push_back(oc);
                    }
                    out.set_transition(h, s, a, std::move(outs));
                }
            }
    }
    out.validate();
    mdp = std::move(out);
}

MdpSpec load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return nlohmann::json::parse(in).get<MdpSpec>();
}

void save_mdp(const MdpSpec& mdp, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << nlohmann::json(mdp).dump(1) << '\n';
}

}  // namespace metatsrl
