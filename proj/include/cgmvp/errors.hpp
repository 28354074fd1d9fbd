#pragma once

#include <stdexcept>
#include <string>

namespace cgmvp {

/// Base type for all library failures.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated input contract, invalid configuration, or infeasible request.
/// The CLI maps this to exit code 2, everything else to exit code 1.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace cgmvp
