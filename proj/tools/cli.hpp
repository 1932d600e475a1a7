#pragma once

#include <string>
#include <vector>

namespace synbrain::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;     // bad flags or config
inline constexpr int kInput = 2;     // unreadable, malformed or mismatched inputs
inline constexpr int kNanAbort = 3;  // training hit a non-finite loss

/// Runs one command. args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace synbrain::cli
