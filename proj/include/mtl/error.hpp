#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

// Base for everything the library throws. The CLI maps the subclasses onto
// its exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent tensor shapes or extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required, or non-positive losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing files, bad dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid arguments or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph (non-scalar root, repeated backward, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtl
