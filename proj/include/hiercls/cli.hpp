#pragma once

#include <iosfwd>

namespace hiercls {

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kUsageError = 1, kDataError = 2, kPartialSweep = 3 };

/// Entry point of the `hiercls` tool. Subcommands: hierarchy, gen-data,
/// split, train, evaluate, sweep, report.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hiercls
