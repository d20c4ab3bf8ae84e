#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace videxp {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,  // bad flags, config, files or shapes
  kExitModel = 3,       // model or bridge failure
};

/// Runs the `videxp` command line. args excludes the program name.
/// `out` receives --print-config and --help text; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace videxp
