#pragma once

#include <iosfwd>

namespace spdnn::cli {

enum ExitCode : int {
  kOk = 0,
  kInputError = 2,    // usage, parse or unreadable input
  kInfeasible = 3,    // parameter parity cannot be met
  kMismatch = 4,      // checkpoint does not fit the network
  kNumericError = 5,  // non-finite values during training or evaluation
};

/// Runs one `spdnn` subcommand and returns its exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace spdnn::cli
