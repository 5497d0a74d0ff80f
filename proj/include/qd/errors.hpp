#pragma once

#include <stdexcept>
#include <string>

namespace qd {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArchiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised for invalid experiment configurations. `line` is 1-based, 0 when
/// the problem is not tied to a location in a file.
struct ConfigError : std::runtime_error {
    ConfigError(const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line(line) {}
    int line;
};

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace qd
