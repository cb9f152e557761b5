#pragma once

#include <stdexcept>
#include <string>

namespace fastgp {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied data or parameters was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a trustworthy result
/// (overflow, loss of definiteness, CG breakdown, non-convergence).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fastgp
