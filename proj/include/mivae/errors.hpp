#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mivae {

// Root of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between tensors, layers or files.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation (e.g. log of a non-positive value).
class DomainError : public Error {
public:
    using Error::Error;
};

// Caller violated an API precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Non-finite value produced during a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid configuration (config files, CLI flags, fold/grid parameters).
class ConfigError : public Error {
public:
    using Error::Error;
};

// A synthetic-data spec whose rejection sampling cannot be satisfied.
class InfeasibleSpecError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// Malformed or inconsistent dataset.
class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Undefined metric, e.g. AUC-PR with no positive instances.
class MetricError : public Error {
public:
    using Error::Error;
};

} // namespace mivae
