#pragma once

#include <stdexcept>
#include <string>

namespace dla {

// Base class for everything this library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor rank/dimension mismatches, index-out-of-range, parameter/checkpoint
// shape conflicts.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed files, missing areas, out-of-range labels, unwritable paths.
struct DataError : Error {
    using Error::Error;
};

// NaN/Inf detected in an op output, a loss, or a gradient.
struct NumericalError : Error {
    using Error::Error;
};

// Bad configuration: unknown keys, invalid ablation strings, out-of-range
// hyperparameters.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace dla
