#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace slurmbridge {

struct ProcessOptions {
  std::optional<std::string> cwd;
  std::vector<std::pair<std::string, std::string>> env;  // added to the inherited environment
  std::chrono::milliseconds deadline{300'000};
};

struct ProcessResult {
  int exit_code = 0;  // 128 + signal when killed by a signal
  std::string out;
  std::string err;
  std::chrono::milliseconds elapsed{0};
  bool timed_out = false;
};

/// Runs argv[0] (PATH lookup) with argv verbatim, no shell. The child is
/// killed when the deadline passes. Exit code 127 means the program could not
/// be executed. Throws std::system_error when the child cannot be spawned.
ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options = {});

}  // namespace slurmbridge
