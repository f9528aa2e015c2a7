#pragma once

#include <stdexcept>
#include <string>

namespace copytrace {

/// Base class for all copytrace errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument, dimension, out-of-bounds access or parameter outside
/// its documented range. Maps to CLI exit code 2.
class ParamError : public Error {
public:
    explicit ParamError(const std::string& msg) : Error(msg) {}
};

/// Malformed or truncated file content (bad magic, payload mismatch,
/// unparsable rows). Maps to CLI exit code 3.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Numeric failure: non-finite inputs, undefined losses, failed checks.
/// Maps to CLI exit code 4.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

} // namespace copytrace
