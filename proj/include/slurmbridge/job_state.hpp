#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

namespace slurmbridge {

enum class JobState { Pending, Running, Completed, Failed, Cancelled, Timeout };

inline constexpr std::array<JobState, 6> kAllJobStates{JobState::Pending,   JobState::Running,
                                                       JobState::Completed, JobState::Failed,
                                                       JobState::Cancelled, JobState::Timeout};

/// Scheduler token ("PENDING", "COMPLETED", ...).
std::string_view to_string(JobState state) noexcept;

/// Maps a scheduler accounting token onto JobState. Accepts the standard
/// vocabulary plus "CANCELLED by <uid>", NODE_FAIL and OUT_OF_MEMORY (both
/// FAILED). Returns nullopt for anything else.
std::optional<JobState> parse_job_state(std::string_view token) noexcept;

constexpr bool is_terminal(JobState s) noexcept {
  return s == JobState::Completed || s == JobState::Failed || s == JobState::Cancelled || s == JobState::Timeout;
}

/// The single-step transition relation: PENDING -> {RUNNING, CANCELLED};
/// RUNNING -> {COMPLETED, FAILED, CANCELLED, TIMEOUT}; terminal -> nothing.
constexpr bool is_valid_transition(JobState from, JobState to) noexcept {
  switch (from) {
    case JobState::Pending: return to == JobState::Running || to == JobState::Cancelled;
    case JobState::Running: return is_terminal(to);
    default: return false;
  }
}

/// Reflexive-transitive closure of is_valid_transition. Two successive
/// observations of the same job (polls may skip intermediate states) must satisfy it.
constexpr bool is_reachable(JobState from, JobState to) noexcept {
  if (from == to) return true;
  if (is_valid_transition(from, to)) return true;
  return from == JobState::Pending && is_terminal(to);
}

/// State of an array parent derived from its tasks.
///   - any task non-terminal: PENDING while every task is PENDING, else RUNNING;
///   - all terminal: COMPLETED if all completed, else FAILED > TIMEOUT > CANCELLED.
/// An empty task list is PENDING.
JobState aggregate_array_state(std::span<const JobState> tasks) noexcept;

}  // namespace slurmbridge
