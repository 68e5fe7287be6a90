#pragma once

#include <stdexcept>
#include <string>

namespace dialhall {

// Miswired shapes, resolutions, or checkpoints.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent data files / records.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Assembled input does not fit the model context window.
class ContextOverflowError : public std::runtime_error {
public:
    ContextOverflowError(const std::string& segment, size_t needed, size_t limit)
        : std::runtime_error("context overflow in segment '" + segment + "': " +
                             std::to_string(needed) + " tokens > limit " +
                             std::to_string(limit)),
          segment_(segment) {}
    const std::string& segment() const { return segment_; }

private:
    std::string segment_;
};

}  // namespace dialhall
