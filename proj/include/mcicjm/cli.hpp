#pragma once

#include <iosfwd>

namespace mcicjm {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,       // bad flags or configuration
  kExitValidation = 2,  // malformed or invalid input data
  kExitNumerical = 3,
};

// Entry point of the mcicjm tool with subcommands simulate, fit, loglik,
// evaluate, aj and validate. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mcicjm
