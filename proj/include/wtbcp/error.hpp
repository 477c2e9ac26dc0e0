#pragma once

#include <stdexcept>
#include <string>

namespace wtbcp {

// Every failure the library reports derives from Error. The CLI maps the
// category to a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user configuration or violated precondition on parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data that parses but violates a domain invariant (label out of range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or similar numeric breakdown during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Internal contract between components was broken (e.g. teacher/student
// parameter sets differ).
class ContractError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

// Metric not defined for the given input (surface distance of an empty region).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace wtbcp
