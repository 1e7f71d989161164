#pragma once

#include <stdexcept>
#include <string>

namespace aria {

/// Base error for everything the library reports.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (manifest, config, checkpoint, WAV).
struct ParseError : Error {
    using Error::Error;
};

/// Inputs violate a documented contract (shape mismatch, out-of-range id, ...).
struct ValidationError : Error {
    using Error::Error;
};

/// Configuration is internally inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

/// Training hit a non-finite loss term.
struct TrainAbort : Error {
    using Error::Error;
};

}  // namespace aria
