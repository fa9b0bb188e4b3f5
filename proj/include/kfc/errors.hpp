#pragma once

#include <stdexcept>
#include <string>

namespace kfc {

// Exit-code taxonomy: UsageError -> 2, ValidationError -> 3, anything else -> 4.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : ValidationError {
    using ValidationError::ValidationError;
};

struct NonDiagonalizable : std::runtime_error {
    explicit NonDiagonalizable(double condition)
        : std::runtime_error("eigendecomposition condition estimate " +
                             std::to_string(condition) + " exceeds threshold"),
          condition_estimate(condition) {}
    double condition_estimate;
};

struct EmptyCommutant : std::runtime_error {
    EmptyCommutant() : std::runtime_error("only trivial commuting directions exist") {}
};

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace kfc
