#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spdnn {

// Malformed architecture / merged-network / dataset text or CLI input.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& token, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what +
                           (token.empty() ? "" : " (at '" + token + "')")),
        line_(line),
        token_(token) {}

  int line() const { return line_; }
  const std::string& token() const { return token_; }

 private:
  int line_;
  std::string token_;
};

// A structurally invalid specification (zero layers, even kernel, ...).
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shape propagation failed: spatial underflow, channel mismatch, concat of
// feeders with different spatial sizes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No width scaling reaches the requested parameter parity.
class InfeasibleParity : public std::runtime_error {
 public:
  InfeasibleParity(std::int64_t best_count, double target, double tolerance)
      : std::runtime_error("parameter parity infeasible: closest count " +
                           std::to_string(best_count) + " vs target " +
                           std::to_string(static_cast<std::int64_t>(target)) +
                           " (tolerance " + std::to_string(tolerance) + ")"),
        best_count_(best_count),
        target_(target) {}

  std::int64_t best_count() const { return best_count_; }
  double target() const { return target_; }

 private:
  std::int64_t best_count_;
  double target_;
};

// Binary file (dataset, checkpoint) does not match its documented layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint contents do not match the network they are loaded into.
class MismatchError : public std::runtime_error {
 public:
  MismatchError(const std::string& node, const std::string& what)
      : std::runtime_error("node '" + node + "': " + what), node_(node) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

// NaN/Inf in activations, losses or gradients.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

}  // namespace spdnn
