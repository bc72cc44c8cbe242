#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rcsm::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

/// Runs one subcommand. `args` excludes the program name, e.g.
/// {"simulate", "--out", "data", "--frames", "50"}. A `--config FILE` of
/// key=value lines supplies defaults; flags on the command line win.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rcsm::cli
