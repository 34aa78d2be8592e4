#pragma once

#include <stdexcept>
#include <string>

namespace cekf {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid input: dimension mismatch, non-finite entries, broken invariants.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Configuration file cannot be parsed or fails validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A forward model produced non-finite output or refused to run
/// (e.g. CFL violation, unphysical parameters).
class ForwardModelError : public Error {
public:
    using Error::Error;
};

/// A constraint set (possibly after restriction) is empty.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: factorization breakdown, iteration cap, etc.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace cekf
