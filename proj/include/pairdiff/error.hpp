#pragma once

#include <stdexcept>
#include <string>

namespace pairdiff {

// Base class for every error raised by the library. The CLI maps these to
// exit code 1 (expected failure); anything else is an internal error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Masked pooling over an empty region is undefined.
class EmptyMask : public Error {
 public:
  EmptyMask() : Error("empty mask: appearance pooling requires at least one set cell") {}
  explicit EmptyMask(const std::string& what) : Error(what) {}
};

// A scene edit would leave pixels without an owning object.
class PartitionViolation : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace pairdiff
