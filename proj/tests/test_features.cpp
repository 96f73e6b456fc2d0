#include <doctest.h>

#include "metatsrl/errors.hpp"
#include "metatsrl/features.hpp"

using namespace metatsrl;

TEST_CASE("tabular one-hot rows") {
    const auto f1 = tabular_features(1, 2);
    CHECK(f1.dense(0, 0, 1) == Vec{0, 1});
    const auto f = tabular_features(2, 2);
    CHECK(f.dim() == 4);
    CHECK(f.dense(2, 1, 0) == Vec{0, 0, 1, 0});
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a)
            for (int t = 0; t < 2; ++t)
                for (int b = 0; b < 2; ++b) {
                    const double ip = dot(f.dense(0, s, a), f.dense(0, t, b));
                    CHECK(ip == (s == t && a == b ? 1.0 : 0.0));
                }
    CHECK(f.max_row_norm() == 1.0);
    CHECK(tabular_features(1, 1).lambda0() == 1.0);
    CHECK(f.lambda0() == 0.0);
}

TEST_CASE("recommendation basis rows") {
    const RecommendationBasis basis(2);
    CHECK(basis.dim() == 6);
    CHECK(basis.dense(std::vector<int>{0, 0}, 0) == Vec{1, 0, 0, 0, 0, 0});
    CHECK(basis.dense(std::vector<int>{-1, 1}, 1) == Vec{0, 1, 0, 0, -1, 1});
    CHECK(RecommendationBasis(10).dim() == 110);
    CHECK_THROWS_AS(basis.row(std::vector<int>{0}, 0), DimensionMismatch);
    CHECK_THROWS_AS(basis.row(std::vector<int>{0, 0}, 2), DimensionMismatch);
}

TEST_CASE("recommendation feature map over a state table") {
    const RecommendationBasis basis(2);
    const std::vector<std::vector<int>> states{{0, 0}, {1, 0}, {0, -1}};
    const auto f = recommendation_features(basis, states, 0.5);
    CHECK(f.kind() == FeatureKind::Recommendation);
    CHECK(f.dense(0, 2, 0) == basis.dense(states[2], 0));
    CHECK(f.lambda0() == 0.5);
    CHECK_FALSE(recommendation_features(basis, states).lambda0().has_value());
}

TEST_CASE("greedy_action") {
    const auto f = tabular_features(1, 3);
    const Vec theta{0.1, 0.9, 0.3};
    CHECK(greedy_action(f, theta, 0, 0) == 1);
    CHECK(greedy_action(f, Vec{0.4, 0.4, 0.1}, 0, 0) == 0);
    CHECK(greedy_action(f, theta, 0, 0, std::vector<int>{0, 2}) == 2);
    CHECK(max_value(f, theta, 0, 0, std::vector<int>{0, 2}) == 0.3);
    CHECK_THROWS_AS(greedy_action(f, theta, 0, 0, std::vector<int>{}), EmptyMask);
    CHECK_THROWS_AS(greedy_action(f, Vec{1, 2}, 0, 0), DimensionMismatch);
}

TEST_CASE("masked greedy matches enumeration of masked values") {
    const auto f = tabular_features(2, 4);
    RngStream rng(4, 0);
    for (int trial = 0; trial < 100; ++trial) {
        Vec theta(8);
        for (auto& t : theta) t = rng.uniform();
        std::vector<int> mask;
        for (int a = 0; a < 4; ++a)
            if (rng.uniform() < 0.6) mask.push_back(a);
        if (mask.empty()) mask.push_back(3);
        const int s = trial % 2;
        int best = mask[0];
        for (int a : mask)
            if (theta[s * 4 + a] > theta[s * 4 + best]) best = a;
        CHECK(greedy_action(f, theta, 0, s, mask) == best);
    }
}
