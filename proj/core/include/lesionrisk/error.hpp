#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace lesionrisk {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One violated rule on one field of an input record.
struct FieldIssue {
  std::string field;
  std::string message;
};

/// A record or argument violates a domain rule. Carries every issue found,
/// not just the first.
class ValidationError : public Error {
 public:
  /// `context` (e.g. "row 7") prefixes the message.
  explicit ValidationError(std::vector<FieldIssue> issues, const std::string& context = {});
  ValidationError(std::string field, std::string message);

  const std::vector<FieldIssue>& issues() const noexcept { return issues_; }

 private:
  std::vector<FieldIssue> issues_;
};

/// Malformed input text (CSV row, JSON document). `row` is 1-based and counts
/// the header as row 1; zero when not applicable.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string field, const std::string& what);

  std::size_t row() const noexcept { return row_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t row_;
  std::string field_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double gradient_norm)
      : Error(what), gradient_norm_(gradient_norm) {}

  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

/// A persisted model bundle whose parts disagree with each other.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace lesionrisk
