#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ppr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition or type invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Failure reported by an embedding, chat or generation backend.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool retryable, int status = 0)
      : Error(what), retryable_(retryable), status_(status) {}

  bool retryable() const noexcept { return retryable_; }
  int status() const noexcept { return status_; }

 private:
  bool retryable_;
  int status_;
};

}  // namespace ppr
