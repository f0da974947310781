#pragma once

#include <stdexcept>
#include <string>

namespace protalign {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension or shape disagreement between operands.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration value (non-positive tau, bad fractions, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Degenerate numeric input: all-masked softmax, near-zero vector norm.
struct DegenerateError : Error {
    using Error::Error;
};

// API misuse: stale tape, uninitialized state.
struct ContractError : Error {
    using Error::Error;
};

// Data-level validation failure (duplicate ids, missing pair ids, empty input).
struct ValidationError : Error {
    using Error::Error;
};

// Unrecognized file magic or unsupported version.
struct FormatError : Error {
    using Error::Error;
};

// Truncated or internally inconsistent file contents.
struct CorruptionError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// NaN/Inf surfaced during training; the run is aborted, not patched.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace protalign
