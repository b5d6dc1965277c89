#pragma once

#include <stdexcept>
#include <string>

namespace sono {

// Error taxonomy mapped to process exit codes by the CLI:
// usage/config -> 1, bad input data -> 2, broken internal invariant -> 3.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace sono
