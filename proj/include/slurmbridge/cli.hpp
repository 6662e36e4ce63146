#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace slurmbridge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRunFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `slurmbridge` tool. `args` excludes the program name.
/// Results go to `out` as `key=value` lines, diagnostics and progress to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slurmbridge
