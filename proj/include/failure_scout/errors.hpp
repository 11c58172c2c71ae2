#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace failure_scout {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class MissingLabelError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Infeasible synthetic dataset specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied parameter is outside its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable data values.
class DataError : public Error {
 public:
  using Error::Error;
};

class EmptyClassError : public Error {
 public:
  EmptyClassError(int label);
  int label() const noexcept { return label_; }

 private:
  int label_;
};

/// Factorization or inversion failed even after regularization.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, std::optional<int> round = std::nullopt);
  std::optional<int> round() const noexcept { return round_; }

 private:
  std::optional<int> round_;
};

class DuplicateQueryError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Metrics requested against ground truth that has no patterns.
class UndefinedMetricsError : public Error {
 public:
  using Error::Error;
};

class AnnotatorError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace failure_scout
