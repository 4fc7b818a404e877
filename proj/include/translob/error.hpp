#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace translob {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV rows, JSON documents, archive headers).
/// Row and column are 1-based when known, 0 when not applicable.
struct ParseError : Error {
  explicit ParseError(const std::string& msg, std::size_t row = 0, std::size_t col = 0)
      : Error(locate(msg, row, col)), row(row), col(col) {}
  std::size_t row;
  std::size_t col;

 private:
  static std::string locate(const std::string& msg, std::size_t row, std::size_t col) {
    std::string out = msg;
    if (row > 0) out += " (row " + std::to_string(row);
    if (row > 0 && col > 0) out += ", column " + std::to_string(col);
    if (row > 0) out += ")";
    return out;
  }
};

/// Semantic invariant violations: crossed books, bad config values,
/// degenerate statistics.
struct ValidationError : Error {
  using Error::Error;
};

/// Tensor shape disagreements at op boundaries.
struct ShapeError : Error {
  using Error::Error;
};

/// Filesystem and stream failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace translob
