#pragma once

#include <stdexcept>
#include <string>

namespace sdm {

// Input data violates a documented precondition or type invariant.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external input (text files, JSON artifacts).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an API contract (shape mismatch, wrong mode, bad argument).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numeric result left the representable range (NaN/Inf).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A stochastic simulation could not satisfy its goal within its retry budget.
struct SimulationError : std::runtime_error {
    explicit SimulationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (missing file, unwritable directory).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sdm
