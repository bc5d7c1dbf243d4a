#pragma once

#include <stdexcept>
#include <string>

namespace treecode {

// Malformed grammar text or a grammar/model mismatch.
class GrammarError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Syntax errors in tree text or source code. Line and column are 1-based;
// zero means "not applicable".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = 0, int column = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ", column " +
                                          std::to_string(column) + ": " + what
                                    : what),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

// Bad input data: shape mismatches, unusable files, violated preconditions.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure (non-SPD pivot, non-convergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace treecode
