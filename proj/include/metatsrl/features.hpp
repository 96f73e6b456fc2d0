#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "metatsrl/linalg.hpp"

namespace metatsrl {

/// Sparse feature row: (coordinate, value) pairs with distinct coordinates.
struct SparseRow {
    std::vector<std::pair<int, double>> entries;

    double dot(std::span<const double> theta) const {
        double s = 0.0;
        for (const auto& [i, v] : entries) s += v * theta[i];
        return s;
    }
    double squared_norm() const {
        double s = 0.0;
        for (const auto& e : entries) s += e.second * e.second;
        return s;
    }
    Vec dense(int dim) const;
};

enum class FeatureKind { Tabular, Recommendation };

/// Generalization matrices Phi_h(s, a) over a finite state table.
///
/// Both supported kinds use the same rows at every stage, so rows are
/// stored once per (state, action).
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(FeatureKind kind, int dim, int num_states, int num_actions,
               std::vector<SparseRow> rows, std::optional<double> lambda0_bound = std::nullopt);

    FeatureKind kind() const { return kind_; }
    int dim() const { return dim_; }
    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }

    const SparseRow& row(int /*h*/, int s, int a) const {
        return rows_[static_cast<std::size_t>(s) * num_actions_ + a];
    }
    Vec dense(int h, int s, int a) const { return row(h, s, a).dense(dim_); }
    double value(int h, int s, int a, std::span<const double> theta) const {
        return row(h, s, a).dot(theta);
    }

    /// Largest row norm (Phi_max).
    double max_row_norm() const;

    /// min over (h, s, a) of lambda_min(Phi^T(s,a) Phi(s,a)). Computed for
    /// tabular maps (a rank-one outer product, so 0 once dim > 1); for
    /// recommendation maps this is the configured lower bound, if any.
    std::optional<double> lambda0() const;

private:
    FeatureKind kind_ = FeatureKind::Tabular;
    int dim_ = 0;
    int num_states_ = 0;
    int num_actions_ = 0;
    std::vector<SparseRow> rows_;
    std::optional<double> lambda0_bound_;
};

/// One-hot features, M = S * A, coordinate of (s, a) is s * A + a.
FeatureMap tabular_features(int num_states, int num_actions);

/// Basis for the sequential recommendation model with P products:
///   coordinates [0, P):        phi_i(x, a)  = 1{a = i}
///   coordinates P + i * P + j: phi_ij(x, a) = x_j 1{a = i}
/// so M = P^2 + P.
class RecommendationBasis {
public:
    explicit RecommendationBasis(int num_products);

    int num_products() const { return products_; }
    int dim() const { return products_ * products_ + products_; }

    SparseRow row(std::span<const int> x, int a) const;
    Vec dense(std::span<const int> x, int a) const { return row(x, a).dense(dim()); }

private:
    int products_;
};

/// Feature map of the basis evaluated on an enumerated state table
/// (states[s] is the sign vector x of state s).
FeatureMap recommendation_features(const RecommendationBasis& basis,
                                   const std::vector<std::vector<int>>& states,
                                   std::optional<double> lambda0_bound = std::nullopt);

/// Lowest-index argmax over allowed actions of Phi_h(s, a) theta. With no
/// mask every action is allowed. Throws EmptyMask for an empty mask.
int greedy_action(const FeatureMap& fmap, std::span<const double> theta, int h, int s,
                  const std::optional<std::vector<int>>& mask = std::nullopt);

/// Maximum of Phi_h(s, a) theta over the listed actions.
double max_value(const FeatureMap& fmap, std::span<const double> theta, int h, int s,
                 std::span<const int> actions);

}  // namespace metatsrl
