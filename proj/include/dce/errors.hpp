#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dce {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: dimension mismatch, unknown names, out-of-range counts.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A coded row that is not a valid dummy coding.
class CorruptDesign : public Error {
 public:
  using Error::Error;
};

/// Malformed CSV/JSON input. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed file whose schema_version we do not understand.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Every optimizer start ended with a singular information matrix.
class DegenerateDesignSpace : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  enum class Kind { rank_deficient, separation, degenerate_price };
  EstimationError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class SurveyError : public Error {
 public:
  enum class Kind { closed, unknown_session, bad_choice, session_complete };
  SurveyError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace dce
