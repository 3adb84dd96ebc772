#pragma once

#include <stdexcept>
#include <string>

namespace fzg {

// Base for every error raised by the library. The CLI maps NumericalError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary operation on ParamSets with differing names, order or shapes.
class CongruenceError : public Error {
 public:
  using Error::Error;
};

// Length or shape mismatch on a single operand.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Index, step or label outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or parameter range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Structural problems with a serialized artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Non-finite loss or parameter encountered during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fzg
