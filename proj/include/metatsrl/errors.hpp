#pragma once

#include <stdexcept>
#include <string>

namespace metatsrl {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A Cholesky pivot was not strictly positive.
class NotPositiveDefinite : public Error {
public:
    explicit NotPositiveDefinite(const std::string& where)
        : Error("matrix is not positive definite: " + where) {}
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidMdp : public Error {
public:
    using Error::Error;
};

class InvalidAction : public Error {
public:
    InvalidAction(int stage, int state, int action)
        : Error("invalid action " + std::to_string(action) + " at stage " + std::to_string(stage) +
                ", state " + std::to_string(state)),
          stage_(stage), state_(state), action_(action) {}
    int stage() const { return stage_; }
    int state() const { return state_; }
    int action() const { return action_; }

private:
    int stage_, state_, action_;
};

class EmptyMask : public Error {
public:
    EmptyMask() : Error("action mask is empty") {}
};

/// OLS design at a stage is singular.
class RankDeficient : public Error {
public:
    explicit RankDeficient(int stage)
        : Error("design matrix is rank deficient at stage " + std::to_string(stage)), stage_(stage) {}
    int stage() const { return stage_; }

private:
    int stage_;
};

class EmptyList : public Error {
public:
    EmptyList() : Error("estimate list is empty") {}
};

class TooFewTasks : public Error {
public:
    explicit TooFewTasks(int have)
        : Error("covariance estimate needs at least 3 source tasks, have " + std::to_string(have)) {}
};

class BudgetExceeded : public Error {
public:
    explicit BudgetExceeded(long long count)
        : Error("state enumeration needs " + std::to_string(count) + " states, over budget"),
          count_(count) {}
    long long count() const { return count_; }

private:
    long long count_;
};

class RepeatedRecommendation : public Error {
public:
    explicit RepeatedRecommendation(int product)
        : Error("product " + std::to_string(product) + " was already recommended this episode") {}
};

class MissingOracle : public Error {
public:
    MissingOracle() : Error("meta_oracle results are required for meta-regret") {}
};

/// Invalid experiment configuration; field() names the offending JSON path.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

}  // namespace metatsrl
