#pragma once

#include <stdexcept>
#include <string>

namespace vibtx {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on arguments was violated (bad shape, out-of-range config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file, wrong kind or unsupported format version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload checksum or length does not match the manifest.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: integrator blow-up, NaN loss, non-finite gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vibtx
