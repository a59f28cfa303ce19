#pragma once

#include <stdexcept>
#include <string>

namespace spheretrain {

// Caller broke a documented precondition (dimension mismatch, non-unit row, ...).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// A sphere row was numerically destroyed (zero or non-finite norm).
struct RetractionFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A test oracle could not be evaluated (non-finite function value).
struct OracleFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad experiment/rule configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File format or filesystem problem.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ContractViolation(what);
    }
}

}  // namespace spheretrain
