#pragma once

#include <stdexcept>
#include <string>

namespace recformer {

// Shape/dimension mismatches between tensors or matrices.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violations of the availability-mask contract (e.g. a sample with no view left).
struct MaskError : std::runtime_error {
    explicit MaskError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad file contents; carries file and line context in the message.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values (rates out of range, d_e not divisible by heads, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operations called out of order (e.g. graph loss before the embedding buffer is filled).
struct SequenceError : std::runtime_error {
    explicit SequenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses or other numeric breakdown during training.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace recformer
