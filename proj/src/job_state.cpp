#include "slurmbridge/job_state.hpp"

#include <algorithm>

namespace slurmbridge {

std::string_view to_string(JobState state) noexcept {
  switch (state) {
    case JobState::Pending: return "PENDING";
    case JobState::Running: return "RUNNING";
    case JobState::Completed: return "COMPLETED";
    case JobState::Failed: return "FAILED";
    case JobState::Cancelled: return "CANCELLED";
    case JobState::Timeout: return "TIMEOUT";
  }
  return "?";
}

std::optional<JobState> parse_job_state(std::string_view token) noexcept {
  if (token == "PENDING" || token == "REQUEUED") return JobState::Pending;
  if (token == "RUNNING" || token == "COMPLETING") return JobState::Running;
  if (token == "COMPLETED") return JobState::Completed;
  if (token == "FAILED" || token == "NODE_FAIL" || token == "OUT_OF_MEMORY" || token == "OOM" ||
      token == "BOOT_FAIL")
    return JobState::Failed;
  if (token == "TIMEOUT" || token == "DEADLINE") return JobState::Timeout;
  if (token == "CANCELLED" || token.rfind("CANCELLED ", 0) == 0) return JobState::Cancelled;
  return std::nullopt;
}

namespace {

bool has_non_pending(std::span<const JobState> tasks) {
  return std::any_of(tasks.begin(), tasks.end(), [](JobState s) { return s != JobState::Pending; });
}

}  // namespace

JobState aggregate_array_state(std::span<const JobState> tasks) noexcept {
  if (tasks.empty()) return JobState::Pending;
  const auto has = [&](JobState s) { return std::find(tasks.begin(), tasks.end(), s) != tasks.end(); };
  const bool all_terminal = std::all_of(tasks.begin(), tasks.end(), [](JobState s) { return is_terminal(s); });
  if (!all_terminal) {
    return has_non_pending(tasks) ? JobState::Running : JobState::Pending;
  }
  if (has(JobState::Failed)) return JobState::Failed;
  if (has(JobState::Timeout)) return JobState::Timeout;
  if (has(JobState::Cancelled)) return JobState::Cancelled;
  return JobState::Completed;
}

}  // namespace slurmbridge
