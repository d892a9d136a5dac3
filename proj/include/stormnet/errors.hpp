#pragma once

#include <stdexcept>
#include <string>

namespace stormnet {

// Shape/dimension mismatches between tensors, layers or datasets.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Bad argument values (fractions, labels, bounds, empty datasets, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Operation called in the wrong order (e.g. backward without forward).
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed on-disk container. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit FormatError(const std::string& what) : std::runtime_error(what), offset(0) {}
    std::size_t offset;
};

// Invalid network configuration; names the offending layer.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace stormnet
