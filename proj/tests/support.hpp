#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's solvers.

#include <cmath>
#include <limits>
#include <vector>

#include "metatsrl/mdp.hpp"
#include "metatsrl/rng.hpp"

namespace metatsrl::testing {

/// Random tabular MDP with Bernoulli rewards and dense transition rows.
inline MdpSpec random_mdp(int S, int A, int H, RngStream& rng) {
    MdpSpec m(S, A, H);
    Vec init(S);
    double z = 0.0;
    for (auto& p : init) z += (p = rng.uniform() + 1e-3);
    for (auto& p : init) p /= z;
    m.set_initial(init);
    for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                m.set_reward(h, s, a, RewardDist::bernoulli(rng.uniform()));
                if (h + 1 < H) {
                    std::vector<Outcome> out(S);
                    double t = 0.0;
                    for (int k = 0; k < S; ++k) t += (out[k].prob = rng.uniform() + 1e-3);
                    for (int k = 0; k < S; ++k) {
                        out[k].next_state = k;
                        out[k].prob /= t;
                    }
                    m.set_transition(h, s, a, out);
                }
            }
    return m;
}

/// Exact value of a deterministic policy from (h, s) by recursion over the
/// outcome tree.
inline double policy_value_from(const MdpSpec& m, const std::vector<int>& policy, int h, int s) {
    const int S = m.num_states();
    const int a = policy[static_cast<std::size_t>(h) * S + s];
    double v = m.mean_reward(h, s, a);
    if (h + 1 < m.horizon())
        for (const auto& o : m.transition(h, s, a)) v += o.prob * policy_value_from(m, policy, h + 1, o.next_state);
    return v;
}

/// Max over all A^(S H) deterministic policies of the value at (stage 0, s).
inline double brute_force_value(const MdpSpec& m, int s0) {
    const int S = m.num_states(), A = m.num_actions(), H = m.horizon();
    const int cells = S * H;
    std::vector<int> policy(cells, 0);
    double best = -std::numeric_limits<double>::infinity();
    while (true) {
        best = std::max(best, policy_value_from(m, policy, 0, s0));
        int i = 0;
        while (i < cells && ++policy[i] == A) policy[i++] = 0;
        if (i == cells) break;
    }
    return best;
}

/// Least-squares slope of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

inline double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
    const double b = ols_slope(x, y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fit = my + b * (x[i] - mx);
        ss_res += (y[i] - fit) * (y[i] - fit);
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    return ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
}

}  // namespace metatsrl::testing
