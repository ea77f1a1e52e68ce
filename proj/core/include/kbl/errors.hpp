#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kbl {

/// Invalid user-facing parameters. Maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated an operation precondition (sizes, unit vectors, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Operation needs data that has not been built yet (e.g. missing X_j).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Iterative process stopped without meeting its criterion. Maps to exit code 3.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> history = {})
        : std::runtime_error(what), history_(std::move(history)) {}
    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// A source whose tail cannot be extrapolated past the slab. Maps to exit code 2.
class InadmissibleSourceError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// The slab sequence ended before the Cauchy criterion held; history holds the deltas.
class ExtendDomainError : public ConvergenceError {
public:
    using ConvergenceError::ConvergenceError;
};

/// Three consecutive nonlinear ratios >= 1; history holds the ratios.
class DivergenceError : public ConvergenceError {
public:
    using ConvergenceError::ConvergenceError;
};

/// NaN/Inf or an ill-posed discrete solve. Maps to exit code 4.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace kbl
