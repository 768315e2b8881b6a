#pragma once

#include <stdexcept>

namespace flowbench {

// Shape or geometry violations: mismatched matrix dimensions, pooling windows
// larger than their input, frames that do not match a model's geometry.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Out-of-range scalar arguments: upsample factor < 1, dropout p >= 1,
// nonpositive data ranges, too few frames.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Broken API contracts: backward on a non-scalar loss, a loss tensor that is
// not on the tape, an optimizer step with missing gradients.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Malformed files: bad magic, truncated payload, unsupported version.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace flowbench
