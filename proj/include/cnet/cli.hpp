#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cnet {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitAucUndefined = 4;

// Runs one command: args[0] is the program name, args[1] the subcommand
// (train, detect, paramcount, eval, bench).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cnet
