#pragma once

#include <stdexcept>
#include <string>

namespace mvloss {

/// Input outside the mathematical domain of an operation (loss outside [0,1],
/// test function with phi(0) != 0, density with mass on the negative half-line).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A computation produced a non-finite value, failed to converge, or broke
/// a numerical invariant beyond tolerance.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad solver backend, missing field).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace mvloss
