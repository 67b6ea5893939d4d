#pragma once

#include <stdexcept>
#include <string>

namespace motionood {

// Base of every error raised by the library. The CLI maps the three families
// below onto exit codes 2 (validation), 3 (I/O) and 4 (numeric).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed file header or document structure.
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Tensor / grid dimensions disagree with what an operation expects.
class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace motionood
