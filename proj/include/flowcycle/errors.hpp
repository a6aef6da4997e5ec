#pragma once

#include <stdexcept>
#include <string>

namespace flowcycle {

// Thrown when a numeric pipeline produces NaN/Inf or otherwise cannot
// continue (the message names the failing step where known).
struct numeric_failure : std::runtime_error {
    explicit numeric_failure(const std::string& what) : std::runtime_error(what) {}
};

// Malformed checkpoint or other binary artifact.
struct format_error : std::runtime_error {
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// Bad run configuration (missing checkpoint, invalid grid value, ...).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem failures; message contains the offending path.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flowcycle
