#pragma once

#include <stdexcept>
#include <string>

namespace hscp {

// Exit codes follow the error category: io -> 2, validation -> 3, numerical -> 4.
enum class ErrorKind { io, validation, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// A representation whose self-HSIC is at or below the degeneracy threshold.
class DegenerateError : public NumericalError {
 public:
  DegenerateError(std::string subject, const std::string& what)
      : NumericalError(what), subject_(std::move(subject)) {}
  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

}  // namespace hscp
