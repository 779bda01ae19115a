#pragma once

#include <stdexcept>
#include <string>

namespace locinv {

// Error taxonomy mapped to CLI exit codes:
//   UsageError -> 2, DataError -> 3, NumericError -> 4.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace locinv
