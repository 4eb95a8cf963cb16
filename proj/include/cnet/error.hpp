#pragma once

#include <stdexcept>
#include <string>

namespace cnet {

// Base for all library errors. The CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised by the optimizer when a gradient turns non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Raised when ROC AUC is requested on a single-class score set.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cnet
