#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nckd {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was not met by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a numerical routine that failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input is structurally valid but too degenerate to compute on (empty class, zero vector).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class DegenerateCentroid : public Error {
 public:
  DegenerateCentroid(std::size_t class_index, const std::string& what)
      : Error(what), class_index_(class_index) {}
  std::size_t class_index() const noexcept { return class_index_; }

 private:
  std::size_t class_index_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class DataCoverageError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what) : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nckd
