#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace soba {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitInput = 3,
  kExitNumeric = 4,
};

/// Entry point for `soba {run|synth|sweep}`. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace soba
