#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "slurmbridge/job_state.hpp"
#include "slurmbridge/transport.hpp"

namespace slurmbridge {

struct SimNode {
  int cpus = 4;
  int gpus = 0;
  int mem_mb = 16384;

  bool operator==(const SimNode&) const = default;
};

struct SimTopology {
  std::vector<SimNode> nodes{SimNode{}, SimNode{}};
  std::chrono::seconds default_duration{30};
  std::vector<std::string> partitions;  // empty: any partition accepted

  /// `{"nodes":[{"cpus":4,"gpus":0,"mem_mb":16384},...], "default_duration_s":30, "partitions":[...]}`
  static SimTopology parse(std::string_view json_text);
  bool operator==(const SimTopology&) const = default;
};

using SimTime = std::chrono::milliseconds;

struct SimEvent {
  SimTime time{0};
  std::int64_t job_id = 0;
  std::optional<int> task;  // array task index
  JobState from = JobState::Pending;
  JobState to = JobState::Pending;

  bool operator==(const SimEvent&) const = default;
  std::string to_string() const;
};

/// Forces the outcome of matching jobs. Matching happens at submission; a
/// JobId matcher also applies to an already-submitted, unfinished job.
struct FaultDirective {
  enum class Match { NextSubmission, JobId, ScriptPathContains };
  Match match = Match::NextSubmission;
  std::int64_t job_id = 0;
  std::string pattern;
  std::optional<JobState> forced_state;  // Failed, Timeout or Cancelled
  bool missing_output = false;
};

struct SimTask {
  JobState state = JobState::Pending;
  int node = -1;
  std::optional<SimTime> start;
  std::optional<SimTime> end;
  int exit_code = 0;

  bool operator==(const SimTask&) const = default;
};

struct SimJob {
  std::int64_t id = 0;
  std::optional<std::pair<int, int>> array;  // inclusive index range
  int cpus = 1;
  int gpus = 0;
  int mem_mb = 0;
  SimTime duration{0};
  std::optional<SimTime> time_limit;
  std::optional<int> outputs;  // number of output files; default: one per input
  std::string script_path;
  std::string script_text;
  std::string logfile_pattern;
  EnvList env;
  SimTime submitted{0};
  std::optional<JobState> forced_state;
  bool missing_output = false;
  bool unschedulable = false;
  std::vector<SimTask> tasks;  // one entry for plain jobs

  JobState state() const;  // aggregated for arrays
  bool operator==(const SimJob&) const = default;
};

struct SimDiagnostic {
  std::int64_t job_id = 0;
  std::string reason;
};

/// Deterministic Slurm stand-in: an in-memory filesystem, a FIFO first-fit
/// scheduler over fixed nodes, and a virtual clock that only moves in advance().
///
/// Scheduling: pending units (plain jobs, or array tasks in index order) are
/// considered in submission order. The oldest unit that could ever fit some
/// node blocks everything behind it until it starts (no backfill); units that
/// can never fit are skipped and reported by diagnostics().
///
/// Job work is declared by an optional `#SIM duration=<s> outputs=<n>` line.
/// On completion, workflow jobs (IN_PATH/OUT_PATH in their environment) write
/// `<stem>_mask.tiff` per input stem into OUT_PATH; conversion array tasks
/// (DATA_PATH/SRC_FORMAT/DST_FORMAT) turn the task-th `*.<src>` item into
/// `<stem>.<dst>`.
///
/// All members lock an internal mutex; calls from several endpoints are
/// serialized in arrival order.
class SimCluster {
 public:
  explicit SimCluster(SimTopology topology = {});

  /// Executes one command of the supported grammar (sbatch, sacct, scancel,
  /// mkdir, test, rm, mv, zip, unzip, sha256sum, singularity pull, cat, ls,
  /// echo, true, false, sleep). Anything else exits 127.
  ExecResult exec(const std::vector<std::string>& argv, const ExecOptions& options = {});

  /// Moves virtual time forward by dt and returns the transitions that happened.
  std::vector<SimEvent> advance(SimTime dt);

  void inject_fault(FaultDirective directive);
  /// The next `count` exec calls of `command` fail with ConnectionLost at the endpoint.
  void inject_transport_failures(std::string command, int count);
  /// Flip a byte in the next upload or download passing through an endpoint.
  void corrupt_next_transfer();
  /// Make every path under `prefix` unwritable.
  void set_read_only(std::string prefix);
  /// `singularity pull` fails for images whose URI contains `pattern`.
  void fail_pulls_matching(std::string pattern);

  SimTime now() const;
  std::vector<SimEvent> trace() const;
  std::optional<SimJob> job(std::int64_t id) const;
  std::vector<SimJob> jobs() const;
  std::vector<SimDiagnostic> diagnostics() const;
  /// Committed (cpus, gpus, mem) per node right now.
  std::vector<SimNode> node_usage() const;
  /// Files written as job output, path -> content, per job id.
  std::map<std::string, std::string> output_manifest(std::int64_t job_id) const;

  std::optional<std::string> read_file(const std::string& path) const;
  /// Fails (returns false) when the parent directory is missing or read-only.
  bool write_file(const std::string& path, std::string content);
  bool is_directory(const std::string& path) const;
  /// Sorted `d <path>` / `f <path> <sha256>` lines for everything under prefix.
  std::string tree_snapshot(const std::string& prefix) const;

  const SimTopology& topology() const noexcept { return topology_; }

  nlohmann::json to_json() const;
  static std::unique_ptr<SimCluster> from_json(const nlohmann::json& state);

  // Endpoint hooks.
  bool take_transport_failure(const std::string& command);
  bool take_corruption();

 private:
  struct Unit {
    std::int64_t job_id;
    int task;
    bool operator==(const Unit&) const = default;
  };

  ExecResult exec_locked(const std::vector<std::string>& argv, const ExecOptions& options);
  ExecResult cmd_sbatch(const std::vector<std::string>& argv, const std::string& cwd, const EnvList& env);
  ExecResult cmd_sacct(const std::vector<std::string>& argv);
  ExecResult cmd_scancel(const std::vector<std::string>& argv);
  ExecResult cmd_mkdir(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_test(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_rm(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_mv(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_zip(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_unzip(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_sha256sum(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_singularity(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_cat(const std::vector<std::string>& argv, const std::string& cwd);
  ExecResult cmd_ls(const std::vector<std::string>& argv, const std::string& cwd);

  void schedule(std::vector<SimEvent>& events);
  void start_unit(const Unit& unit, int node, std::vector<SimEvent>& events);
  void finish_unit(const Unit& unit, std::vector<SimEvent>& events);
  void cancel_job(SimJob& job, std::vector<SimEvent>& events);
  void release(const SimJob& job, const SimTask& task);
  void check_capacity() const;
  void apply_faults(SimJob& job);
  bool fits(const SimJob& job, const SimNode& used, const SimNode& cap) const;
  bool ever_fits(const SimJob& job) const;
  void record(std::vector<SimEvent>& events, SimEvent ev);

  std::string log_path(const SimJob& job, int task) const;
  void append_log(const SimJob& job, int task, const std::string& line);
  void produce_outputs(SimJob& job);
  bool convert_item(SimJob& job, int task);
  std::optional<std::string> env_of(const SimJob& job, std::string_view name) const;

  // filesystem helpers (callers hold the lock)
  bool dir_exists(const std::string& p) const { return dirs_.count(p) > 0; }
  bool file_exists(const std::string& p) const { return files_.count(p) > 0; }
  bool writable(const std::string& p) const;
  bool mkdirs(const std::string& p);
  bool put(const std::string& p, std::string content);
  std::vector<std::string> children(const std::string& dir) const;
  void remove_path(const std::string& p);

  SimTopology topology_;
  SimTime clock_{0};
  std::int64_t next_job_id_ = 1;
  std::map<std::int64_t, SimJob> jobs_;
  std::deque<Unit> queue_;
  std::vector<SimNode> used_;
  std::vector<SimEvent> trace_;
  std::map<std::string, std::string> files_;
  std::set<std::string> dirs_{"/"};
  std::vector<FaultDirective> faults_;
  std::map<std::string, int> transport_failures_;
  std::vector<std::string> read_only_;
  std::vector<std::string> failing_pulls_;
  std::map<std::int64_t, std::map<std::string, std::string>> outputs_;
  bool corrupt_next_ = false;
  mutable std::mutex mutex_;
};

/// Endpoint backed by a SimCluster. Several endpoints may share one cluster.
/// `sleep <s>` consumes s seconds of per-call deadline, so a deadline shorter
/// than the sleep raises Timeout without touching the cluster clock.
class SimEndpoint final : public Endpoint {
 public:
  explicit SimEndpoint(std::shared_ptr<SimCluster> cluster) : cluster_(std::move(cluster)) {}

  ExecResult exec(const std::vector<std::string>& argv, const ExecOptions& options = {}) override;
  SimCluster& cluster() const noexcept { return *cluster_; }

 protected:
  void upload(const std::filesystem::path& local, const std::string& remote) override;
  void download(const std::string& remote, const std::filesystem::path& local) override;

 private:
  std::shared_ptr<SimCluster> cluster_;
};

/// Clock whose sleeps advance the simulated cluster.
class SimClock final : public Clock {
 public:
  explicit SimClock(std::shared_ptr<SimCluster> cluster) : cluster_(std::move(cluster)) {}
  std::chrono::milliseconds now() override { return cluster_->now(); }
  void sleep_for(std::chrono::milliseconds duration) override { cluster_->advance(duration); }

 private:
  std::shared_ptr<SimCluster> cluster_;
};

/// Lexically normalizes a remote path against `cwd` ("/" when empty).
std::string normalize_remote_path(std::string_view path, std::string_view cwd = "/");

}  // namespace slurmbridge
