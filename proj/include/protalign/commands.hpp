#pragma once

#include <string>
#include <vector>

namespace protalign::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitFormat = 4;
inline constexpr int kExitDivergence = 5;

// Full CLI entry point: parses argv (subcommands gen/train/eval/retrieve/
// ablate) and executes. Never throws; errors map to the exit codes above.
int run(int argc, const char* const* argv);

// Convenience for in-process invocation; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace protalign::cli
