#pragma once

#include <stdexcept>
#include <string>

namespace nanoflow {

/// Input violates a documented invariant (region map, parameters, samples).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be read or does not follow its schema.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two inputs that must describe the same scenario do not.
class IncompatibleInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace nanoflow
