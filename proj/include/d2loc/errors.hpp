#pragma once

#include <stdexcept>
#include <string>

namespace d2loc {

// Error taxonomy. Usage errors map to CLI exit code 2, everything else to 1.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct UsageError : std::invalid_argument {
    explicit UsageError(const std::string& msg) : std::invalid_argument("usage error: " + msg) {}
};

}  // namespace d2loc
