#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

// Base of every error raised by the library. The CLI maps each subclass to
// an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural hyperparameters that cannot work together (channel/group
// mismatch, even conv1d kernel, ratio that does not divide C, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor extents that are incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Values that are outside an operation's domain (negative variance, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file: bad magic, truncated payload, duplicate archive names.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed file written with a version or dtype this build cannot read.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmfuse
