#pragma once

#include <stdexcept>
#include <string>

namespace harmon {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad inputs: malformed files, schema mismatches, invalid arguments,
// insufficient subjects. CLI exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Numerical failures: rank-deficient designs, degenerate distributions,
// NaN during iteration. CLI exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace harmon
