#pragma once

#include <stdexcept>
#include <string>

namespace uhd {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// process exit codes: ConfigError/UsageError -> 1, IoError/FormatError -> 2,
// NumericError -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents do not line up (channel mismatch, inner product dim, ...).
struct ShapeError : Error {
    using Error::Error;
};

// Requested allocation or crop does not fit.
struct SizeError : Error {
    using Error::Error;
};

// Channel index out of range.
struct IndexError : Error {
    using Error::Error;
};

// Invalid hyperparameter combination (heads not dividing C, ...).
struct ConfigError : Error {
    using Error::Error;
};

// API misuse: non-scalar loss, double backward, missing gradient.
struct ContractError : Error {
    using Error::Error;
};

// Malformed file contents (checkpoint magic, PNG/PPM structure).
struct FormatError : Error {
    using Error::Error;
};

// Filesystem-level failure.
struct IoError : Error {
    using Error::Error;
};

// Non-finite loss or failed numerical self-check.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace uhd
