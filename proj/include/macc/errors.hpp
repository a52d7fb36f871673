#pragma once

#include <stdexcept>
#include <string>

namespace macc {

// Error taxonomy shared by all modules. The bench CLI maps ConfigError to
// exit code 1 and everything else to exit code 2.

struct MaccError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched vector/matrix dimensions.
struct DimensionError : MaccError {
    using MaccError::MaccError;
};

// Invalid or inconsistent configuration (bad k/G, unknown config keys, ...).
struct ConfigError : MaccError {
    using MaccError::MaccError;
};

// NaN/Inf where a finite value is required.
struct NumericError : MaccError {
    using MaccError::MaccError;
};

// Task loss blew past the divergence guard during a task loop.
struct DivergenceError : MaccError {
    using MaccError::MaccError;
};

// Requested more items than a finite resource can provide.
struct CapacityError : MaccError {
    using MaccError::MaccError;
};

// Operation not defined for the given task family.
struct UnsupportedError : MaccError {
    using MaccError::MaccError;
};

// Filesystem failures, always carrying the path.
struct IoError : MaccError {
    using MaccError::MaccError;
};

}  // namespace macc
