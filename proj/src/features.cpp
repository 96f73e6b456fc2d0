#include "metatsrl/features.hpp"

#include <cmath>
#include <limits>

#include "metatsrl/errors.hpp"

namespace metatsrl {

Vec SparseRow::dense(int dim) const {
    Vec v(dim, 0.0);
    for (const auto& [i, x] : entries) v[i] = x;
    return v;
}

FeatureMap::FeatureMap(FeatureKind kind, int dim, int num_states, int num_actions,
                       std::vector<SparseRow> rows, std::optional<double> lambda0_bound)
    : kind_(kind), dim_(dim), num_states_(num_states), num_actions_(num_actions),
      rows_(std::move(rows)), lambda0_bound_(lambda0_bound) {
    if (rows_.size() != static_cast<std::size_t>(num_states) * num_actions)
        throw DimensionMismatch("feature map needs one row per (state, action)");
    for (const auto& r : rows_)
        for (const auto& e : r.entries)
            if (e.first < 0 || e.first >= dim_) throw DimensionMismatch("feature coordinate out of range");
}

double FeatureMap::max_row_norm() const {
    double best = 0.0;
    for (const auto& r : rows_) best = std::max(best, std::sqrt(r.squared_norm()));
    return best;
}

std::optional<double> FeatureMap::lambda0() const {
    if (kind_ != FeatureKind::Tabular) return lambda0_bound_;
    // Phi^T Phi is the rank-one matrix phi phi^T: its smallest eigenvalue
    // is |phi|^2 in dimension one and zero otherwise.
    if (dim_ > 1) return 0.0;
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& r : rows_) lo = std::min(lo, r.squared_norm());
    return lo;
}

FeatureMap tabular_features(int num_states, int num_actions) {
    if (num_states < 1 || num_actions < 1) throw Error("tabular_features needs S, A >= 1");
    std::vector<SparseRow> rows;
    rows.reserve(static_cast<std::size_t>(num_states) * num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) rows.push_back(SparseRow{{{s * num_actions + a, 1.0}}});
    return FeatureMap(FeatureKind::Tabular, num_states * num_actions, num_states, num_actions,
                      std::move(rows));
}

RecommendationBasis::RecommendationBasis(int num_products) : products_(num_products) {
    if (num_products < 1) throw Error("recommendation basis needs at least one product");
}

SparseRow RecommendationBasis::row(std::span<const int> x, int a) const {
    if (static_cast<int>(x.size()) != products_) throw DimensionMismatch("state vector has wrong length");
    if (a < 0 || a >= products_) throw DimensionMismatch("product index out of range");
    SparseRow r;
    r.entries.emplace_back(a, 1.0);
    for (int j = 0; j < products_; ++j)
        if (x[j] != 0) r.entries.emplace_back(products_ + a * products_ + j, static_cast<double>(x[j]));
    return r;
}

FeatureMap recommendation_features(const RecommendationBasis& basis,
                                   const std::vector<std::vector<int>>& states,
                                   std::optional<double> lambda0_bound) {
    const int P = basis.num_products();
    std::vector<SparseRow> rows;
    rows.reserve(states.size() * P);
    for (const auto& x : states)
        for (int a = 0; a < P; ++a) rows.push_back(basis.row(x, a));
    return FeatureMap(FeatureKind::Recommendation, basis.dim(), static_cast<int>(states.size()), P,
                      std::move(rows), lambda0_bound);
}

int greedy_action(const FeatureMap& fmap, std::span<const double> theta, int h, int s,
                  const std::optional<std::vector<int>>& mask) {
    if (static_cast<int>(theta.size()) != fmap.dim()) throw DimensionMismatch("theta has wrong dimension");
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    auto consider = [&](int a) {
        const double v = fmap.value(h, s, a, theta);
        if (best < 0 || v > best_v || (v == best_v && a < best)) {
            best = a;
            best_v = v;
        }
    };
    if (mask) {
        if (mask->empty()) throw EmptyMask();
        for (int a : *mask) consider(a);
    } else {
        for (int a = 0; a < fmap.num_actions(); ++a) consider(a);
    }
    return best;
}

double max_value(const FeatureMap& fmap, std::span<const double> theta, int h, int s,
                 std::span<const int> actions) {
    if (actions.empty()) throw EmptyMask();
    double best = -std::numeric_limits<double>::infinity();
    for (int a : actions) best = std::max(best, fmap.value(h, s, a, theta));
    return best;
}

}  // namespace metatsrl
