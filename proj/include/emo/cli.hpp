#pragma once

#include <string>
#include <vector>

namespace emo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace emo::cli
