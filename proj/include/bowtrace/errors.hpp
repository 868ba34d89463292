#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bowtrace {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented type invariant.
class InvariantError : public Error {
public:
  using Error::Error;
};

/// Malformed or unsupported input text. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// A write or read on an underlying stream failed after `offset` bytes.
class IoError : public Error {
public:
  IoError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class DecodeError : public Error {
public:
  using Error::Error;
};

/// Fewer than two visible markers on an axis.
class OcclusionError : public Error {
public:
  using Error::Error;
};

/// Lines parallel, or otherwise unusable for a contact solution.
class DegenerateGeometryError : public Error {
public:
  using Error::Error;
};

class CalibrationError : public Error {
public:
  using Error::Error;
};

/// A statistic cannot be formed from the data (zero variance, all ties, ...).
class DegenerateStatisticError : public Error {
public:
  using Error::Error;
};

/// Wilcoxon input with no nonzero differences: the caller reports p = 1.
class NoEffectError : public Error {
public:
  using Error::Error;
};

class InsufficientDataError : public Error {
public:
  using Error::Error;
};

}  // namespace bowtrace
