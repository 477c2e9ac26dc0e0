#pragma once

namespace wtbcp {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitIo = 2,
  kExitNumeric = 3,
};

// Parses argv and runs one subcommand. Never throws; failures are reported on
// stderr and mapped to an exit code.
int run_cli(int argc, char** argv);

}  // namespace wtbcp
