#pragma once

#include <stdexcept>
#include <string>

namespace scorelab {

// Base of every error raised by the library. Callers that only care about
// "something in scorelab failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument violated a documented precondition. field() names it.
class ParameterError : public Error {
 public:
  ParameterError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Reverse steps must move strictly backward in time.
class OrderingError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unknown prompt label or mode id.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Inputs at which a quantity is undefined (zero densities and similar).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(long iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace scorelab
