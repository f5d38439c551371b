#pragma once

#include <string>
#include <vector>

namespace lbm {

inline constexpr const char* kVersion = "0.1.0";

/// Entry point of the command-line tool. `args` excludes the program name.
/// Returns the process exit status; on failure a FAILED.json marker is written
/// to the output directory.
int run_cli(const std::vector<std::string>& args);

}  // namespace lbm
