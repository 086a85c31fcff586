#pragma once

#include <stdexcept>
#include <string>

namespace koopnav {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-domain argument.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Least-squares regressor without full column rank (ridge = 0).
class IllConditioned : public Error {
public:
    IllConditioned(std::string block, const std::string& what)
        : Error(what), block_(std::move(block)) {}
    [[nodiscard]] const std::string& block() const noexcept { return block_; }

private:
    std::string block_;
};

/// Lifted state whose heading observables are both zero.
class DegenerateHeading : public Error {
public:
    using Error::Error;
};

/// Agent located exactly at an obstacle center; no separating normal exists.
class DegenerateNormal : public Error {
public:
    DegenerateNormal(int obstacle_id, const std::string& what)
        : Error(what), obstacle_id_(obstacle_id) {}
    [[nodiscard]] int obstacle_id() const noexcept { return obstacle_id_; }

private:
    int obstacle_id_;
};

/// Conformal quantile is the infinite atom; the margin cannot be formed.
class InfiniteQuantile : public Error {
public:
    using Error::Error;
};

/// QP data violates the solver's preconditions (shapes, symmetry, PSD).
class InvalidProblem : public Error {
public:
    using Error::Error;
};

/// Inconsistent configuration (dimension mismatch, bad weights).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace koopnav
