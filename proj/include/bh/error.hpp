#pragma once

#include <stdexcept>
#include <string>

namespace bh {

// Error taxonomy shared by every module. The CLI maps these onto its
// exit-code contract: ConfigError -> 2, IoError/InvalidInputError -> 3,
// NumericError -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed arguments: dimension mismatches, non-finite values,
// degenerate inputs (constant image where variance is required, ...).
class InvalidInputError : public Error {
public:
    using Error::Error;
};

// Bad configuration: unknown keys, out-of-range hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

// File-level failures: missing files, bad magic, truncation, CRC mismatch.
class IoError : public Error {
public:
    using Error::Error;
};

// Numerical aborts: NaN loss during training, non-finite iterates.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace bh
