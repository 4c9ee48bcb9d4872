#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace pir {

/// Exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // runtime error, or a sample failure under --fail-fast
  kExitUsage = 2,    // bad flags or config values
};

/// Entry point of the `pir` tool. `args` excludes the program name.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace pir
