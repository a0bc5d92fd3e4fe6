#pragma once

#include <stdexcept>
#include <string>

namespace xbench {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration (bad shapes, out-of-range class, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed files and failed reads/writes.
class IoError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown (non-finite loss, undefined correlation, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace xbench
