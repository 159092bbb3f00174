#ifndef XMEM_ERRORS_HPP_
#define XMEM_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace xmem {

// Shape contracts between tensors/layers were violated.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or Inf reached a layer boundary. The message names the operation.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No valid (anchor, positive, negative) triplet can be formed.
class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A loss function evaluated twice at the same point gave different values.
class DeterminismError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration key or value; user-facing, maps to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file. `line()` is 1-based, 0 when not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, size_t line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  size_t line() const { return line_; }

 private:
  size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace xmem

#endif  // XMEM_ERRORS_HPP_
