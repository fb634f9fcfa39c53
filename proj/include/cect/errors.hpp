#pragma once

#include <stdexcept>
#include <string>

namespace cect {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor/image dimension disagreement.
struct ShapeError : Error {
    using Error::Error;
};

/// Malformed or truncated file content (HUV1, CWT1, manifest).
struct FormatError : Error {
    using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
struct ConfigError : Error {
    using Error::Error;
};

/// API misuse (e.g. backward on a non-scalar).
struct UsageError : Error {
    using Error::Error;
};

/// Filesystem failure (missing file, unwritable path).
struct IoError : Error {
    using Error::Error;
};

} // namespace cect
