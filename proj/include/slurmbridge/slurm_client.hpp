#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slurmbridge/config.hpp"
#include "slurmbridge/job_state.hpp"
#include "slurmbridge/transport.hpp"

namespace slurmbridge {

// Managed layout under the scratch directory.
std::string images_dir(std::string_view scratch_dir);
std::string job_scripts_dir(std::string_view scratch_dir);
std::string data_dir(std::string_view scratch_dir);
std::string logs_dir(std::string_view scratch_dir);
/// `<scratch>/slurm-scripts/jobs/<name>.sh`
std::string placed_script_path(std::string_view scratch_dir, std::string_view workflow_name);

enum class JobKind { Workflow, ConversionArray };

std::string_view to_string(JobKind kind) noexcept;

struct JobHandle {
  std::int64_t job_id = 0;
  JobKind kind = JobKind::Workflow;
  std::string script_path;
  std::string logfile_path;  // the script's --output pattern (%j, %A, %a unexpanded)
  std::string submitted_at;  // ISO-8601 UTC
  int array_size = 0;        // tasks for ConversionArray, 0 otherwise

  bool operator==(const JobHandle&) const = default;
};

struct EnvReport {
  std::vector<std::string> created_dirs;
  std::vector<std::pair<std::string, std::string>> pulled_images;  // (workflow or converter, image file)
  std::vector<std::string> placed_scripts;                         // written or rewritten this call
  bool refreshed = false;                                          // layout already existed
  std::map<std::string, std::string> images;                       // every provisioned workflow -> image file
  std::map<std::string, std::string> scripts;                      // every provisioned workflow -> job script
  std::vector<std::pair<std::string, std::string>> failures;       // (workflow, message)
};

/// Creates the managed layout, pulls missing workflow and converter images and
/// places one job script per workflow. Workflows that fail to provision are
/// listed in `failures`; the rest stay provisioned. Throws Error{ScratchUnwritable}.
EnvReport init_environment(Endpoint& endpoint, const ClusterProfile& profile, const WorkflowRegistry& registry);

/// Uploads the script and runs `sbatch <path>` with `env` prepended.
/// Throws Error{SubmitRejected | UnparseableJobId}.
JobHandle submit_job(Endpoint& endpoint, std::string_view script_text, const std::string& remote_script_path,
                     const EnvList& env, JobKind kind = JobKind::Workflow);

/// `sacct -n -P -X -o JobID,State -j <ids>` (a single exec). Ids absent from
/// accounting are PENDING; array parents aggregate their tasks.
/// Throws Error{AccountingUnavailable | UnknownState}.
std::map<std::int64_t, JobState> poll_jobs(Endpoint& endpoint, const std::vector<JobHandle>& handles);

struct WaitResult {
  std::map<std::int64_t, JobState> states;
  bool deadline_exceeded = false;
  int polls = 0;
};

/// Polls every `poll_interval` until all handles are terminal or `deadline`
/// elapses. Up to two consecutive AccountingUnavailable errors are absorbed;
/// the third propagates. `on_poll` sees each successful poll.
WaitResult wait_terminal(Endpoint& endpoint, Clock& clock, const std::vector<JobHandle>& handles,
                         std::chrono::milliseconds poll_interval, std::chrono::milliseconds deadline,
                         const std::function<void(const std::map<std::int64_t, JobState>&)>& on_poll = {});

/// `scancel <id>`. Already-terminal jobs are left alone; only transport errors throw.
void cancel_job(Endpoint& endpoint, const JobHandle& handle);

/// Remote log files of a job: `omero-job-<id>.log`, plus `omero-job-<id>_<task>.log` for arrays.
std::vector<std::string> logfile_candidates(const JobHandle& handle);

/// Copies every existing log of the job into local_dir. Throws Error{LogMissing} when none exists.
std::vector<std::filesystem::path> fetch_logfile(Endpoint& endpoint, const JobHandle& handle,
                                                 const std::filesystem::path& local_dir);

/// Zips `out_dir` on the cluster (entries relative to out_dir), copies the
/// archive to `local_dir/archive_name` with checksum verification and removes
/// the remote archive. Throws Error{EmptyOutput | SourceMissing | RetrievalFailed}.
std::filesystem::path fetch_results(Endpoint& endpoint, const std::string& out_dir,
                                    const std::filesystem::path& local_dir, const std::string& archive_name);

/// Removes the given remote paths; returns those that existed.
std::vector<std::string> cleanup_run(Endpoint& endpoint, const std::vector<std::string>& remote_paths);

/// Current UTC time as `YYYY-MM-DDTHH:MM:SSZ`.
std::string iso8601_now();

}  // namespace slurmbridge
