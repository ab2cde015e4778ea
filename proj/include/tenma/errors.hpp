#pragma once

#include <stdexcept>
#include <string>

namespace tenma {

/// Malformed or inconsistent input (shapes, indices, files, configs).
/// The CLI maps this to exit code 2.
class InputError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a usable result.
/// The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace tenma
