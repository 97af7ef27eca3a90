#pragma once

#include <stdexcept>
#include <string>

namespace mcnet {

// Invalid or inconsistent configuration (shapes, protocol arithmetic, files).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A session-protocol contract was violated at runtime.
class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

// Undefined numeric operation (zero-norm cosine, negative variance, divergence).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mcnet
