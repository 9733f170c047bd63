#pragma once

#include <stdexcept>
#include <string>

namespace morphosim {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input text (bad column count, bad label, bad number).
struct ParseError : Error {
    using Error::Error;
};

// Well-formed input that violates a data contract (duplicate key, empty form).
struct ValidationError : Error {
    using Error::Error;
};

// Tensor dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf or other numeric breakdown.
struct NumericError : Error {
    using Error::Error;
};

// Caller broke an operation precondition.
struct ContractError : Error {
    using Error::Error;
};

// Symbol outside the model's alphabets.
struct VocabError : Error {
    using Error::Error;
};

// Bad configuration value or key.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem failure.
struct IoError : Error {
    using Error::Error;
};

// Optimization diverged.
struct TrainingError : Error {
    using Error::Error;
};

// Gradient check could not run (e.g. non-deterministic loss).
struct CheckError : Error {
    using Error::Error;
};

}  // namespace morphosim
