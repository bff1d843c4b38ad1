#pragma once

#include <stdexcept>
#include <string>

namespace mscred {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Problems with user-supplied data or configuration: unreadable files,
/// malformed rows, mismatched shapes, invalid option combinations.
/// The CLI maps these to exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

class ConfigError : public DataError {
public:
    using DataError::DataError;
};

/// Raised when an anchor lacks the history its signature windows need.
/// Carries the first step index at which the request would be valid.
class ContextError : public DataError {
public:
    ContextError(const std::string& msg, long long first_valid)
        : DataError(msg), first_valid_step(first_valid) {}
    long long first_valid_step;
};

/// Numeric failures: diverging training loss, failed gradient checks.
/// The CLI maps these to exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace mscred
