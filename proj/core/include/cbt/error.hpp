#pragma once

#include <stdexcept>
#include <string>

namespace cbt {

/// Base class for all library errors. The CLI maps each subclass to a
/// distinct process exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration: out-of-range values, unknown keys, invalid shapes
/// requested by the caller. Exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, malformed or truncated data artifacts. Exit code 3.
class DataError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf surfaced in a public operation. Exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Stored checksum does not match the artifact on disk. Exit code 5.
class ChecksumError : public Error {
public:
    using Error::Error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;   // unexpected exceptions
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int numeric = 4;
inline constexpr int checksum = 5;
}  // namespace exit_code

}  // namespace cbt
