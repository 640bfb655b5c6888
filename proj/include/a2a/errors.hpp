#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace a2a {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invariant violations and bad parameters (caller error).
struct ValidationError : Error {
    using Error::Error;
};

// Malformed serialized data: bad magic, version, shape, truncation.
struct FormatError : Error {
    using Error::Error;
};

// Stream/file failures. Carries how far a write got before failing.
struct IoError : Error {
    explicit IoError(const std::string& msg, std::size_t bytes_written = 0)
        : Error(msg), bytes_written(bytes_written) {}
    std::size_t bytes_written;
};

// Correspondence could not be established (no usable match).
struct NoMatchError : Error {
    using Error::Error;
};

}  // namespace a2a
