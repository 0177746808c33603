#pragma once

#include <stdexcept>
#include <string>

namespace icar {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up; the message names the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An id (scene, session, item, set) is unknown.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// A persisted file is malformed or truncated.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace icar
