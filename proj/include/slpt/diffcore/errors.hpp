#pragma once

#include <stdexcept>
#include <string>

namespace slpt {

// Caller broke a documented precondition.
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// NaN/Inf or a degenerate quantity appeared during evaluation.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user data (too few points, malformed files).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ContractViolation(what);
}

} // namespace slpt
