#pragma once

#include <stdexcept>
#include <string>

namespace millopt {

/// Bad user input: malformed config, out-of-range parameter, size mismatch.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed to produce a usable result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace millopt
