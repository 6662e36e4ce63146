#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slurmbridge/config.hpp"
#include "slurmbridge/descriptor.hpp"
#include "slurmbridge/error.hpp"
#include "slurmbridge/slurm_client.hpp"
#include "slurmbridge/transport.hpp"

namespace slurmbridge {

// --- inputs -----------------------------------------------------------------

enum class InputFormat { Zarr, Tiff2D, OmeTiff };

std::string_view to_string(InputFormat f) noexcept;
/// Extension used inside the packed archive: "zarr", "tiff", "ome.tiff".
std::string_view packed_extension(InputFormat f) noexcept;

struct InputItem {
  std::string id;
  std::filesystem::path local_path;
  InputFormat format = InputFormat::Tiff2D;

  bool operator==(const InputItem&) const = default;
};

/// Detects the format from the name (`.ome.tif[f]`, `.tif[f]`, `.zarr` directory)
/// and derives the id from the name without that extension.
/// Throws Error{MissingInput} if absent, Error{InvalidValue} if unrecognised.
InputItem make_input_item(const std::filesystem::path& path);

/// Recognised entries directly inside `dir`, sorted by name; other entries are skipped.
std::vector<InputItem> discover_inputs(const std::filesystem::path& dir);

/// Writes `staging_dir/inputs.zip` with every item under `in/<id>.<ext>`
/// (Zarr stores as directory trees), sorted by id.
/// Throws Error{MissingInput | DuplicateId}.
std::filesystem::path pack_inputs(const std::vector<InputItem>& items, const std::filesystem::path& staging_dir);

struct BatchPlan {
  std::size_t batch_size = 1;
  std::vector<std::vector<std::string>> batches;

  bool operator==(const BatchPlan&) const = default;
};

/// Greedy, order-preserving chunking. Throws Error{InvalidBatchSize} for batch_size <= 0.
BatchPlan plan_batches(const std::vector<InputItem>& items, long long batch_size);

// --- run records ----------------------------------------------------------------

enum class RunStage { Preparing, Transferring, Queued, Running, Retrieving, Done, Failed, PartialFailure };

std::string_view to_string(RunStage s) noexcept;
std::optional<RunStage> parse_run_stage(std::string_view s) noexcept;
constexpr bool is_final(RunStage s) noexcept {
  return s == RunStage::Done || s == RunStage::Failed || s == RunStage::PartialFailure;
}

struct StageEntry {
  RunStage stage = RunStage::Preparing;
  std::string at;  // ISO-8601
  std::string detail;

  bool operator==(const StageEntry&) const = default;
};

struct BatchRun {
  int index = 0;
  std::vector<std::string> items;
  std::string remote_dir;
  std::optional<JobHandle> conversion_handle;
  std::optional<JobHandle> workflow_handle;
  std::optional<JobState> state;  // nullopt: never reached the scheduler
  std::optional<Errc> error;      // stage-tagged failure
  std::string error_detail;
  std::optional<std::filesystem::path> results_zip;
  std::vector<std::filesystem::path> logs;

  /// COMPLETED and nothing went wrong around it.
  bool succeeded() const noexcept { return state == JobState::Completed && !error; }
  bool operator==(const BatchRun&) const = default;
};

struct RunRecord {
  std::string run_id;
  std::string workflow;
  std::string version;
  ParamValues values;
  std::size_t batch_size = 0;
  std::map<std::string, std::filesystem::path> inputs;  // id -> local path
  std::vector<BatchRun> batches;
  RunStage overall_state = RunStage::Preparing;
  std::vector<StageEntry> stages;
  std::string started_at;
  std::string finished_at;
  std::vector<std::filesystem::path> output_artifacts;

  bool operator==(const RunRecord&) const = default;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Random RFC 4122 version-4 UUID.
std::string generate_run_id();

// --- journal ---------------------------------------------------------------------

/// Append-only `<run-id>.journal`: one tab-separated line per event,
/// `<ISO-8601>\t<kind>\t<detail>`, where kind is a stage name or one of
/// `batch`, `handle`, `artifact`, `cancel`.
class Journal {
 public:
  Journal(std::filesystem::path dir, std::string run_id);

  void append(std::string_view kind, std::string_view detail);
  const std::filesystem::path& path() const noexcept { return path_; }

  struct Line {
    std::string at;
    std::string kind;
    std::string detail;
  };
  /// Throws Error{UnknownRunId} when the journal does not exist.
  static std::vector<Line> read(const std::filesystem::path& dir, const std::string& run_id);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

std::filesystem::path journal_path(const std::filesystem::path& dir, const std::string& run_id);
std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& run_id);
void save_record(const std::filesystem::path& dir, const RunRecord& record);
/// Throws Error{UnknownRunId}.
RunRecord load_record(const std::filesystem::path& dir, const std::string& run_id);

// --- runs ------------------------------------------------------------------------------

struct RunContext {
  EndpointPool& pool;
  Clock& clock;
  const ClusterConfig& config;
};

struct RunOptions {
  bool skip_conversion = false;
  std::size_t parallelism = 4;  // concurrent batch transfers/retrievals
  std::filesystem::path staging_root = std::filesystem::temp_directory_path() / "slurmbridge-staging";
  std::filesystem::path results_dir = ".";
  std::optional<std::filesystem::path> journal_dir;
  std::optional<std::chrono::milliseconds> poll_interval;  // profile value when absent
  std::chrono::milliseconds deadline{7LL * 24 * 3600 * 1000};
  std::optional<std::string> run_id;
  std::function<void(const std::string& run_id, const StageEntry&)> on_stage;
};

/// The workflow's descriptor (from its configured descriptor file), or a
/// parameterless stand-in when none is configured. Throws Error{UnknownWorkflow}.
WorkflowDescriptor load_workflow_descriptor(const ClusterConfig& config, const std::string& workflow);

/// Validation, packing, transfer, conversion (awaited), workflow submission.
/// Returns with the workflow jobs queued. Validation errors are thrown before
/// any remote activity.
RunRecord start_run(RunContext ctx, const std::string& workflow, const ParamValues& values,
                    const std::vector<InputItem>& items, long long batch_size, const RunOptions& options);

/// Waits for the workflow jobs, retrieves results (COMPLETED) or logs only
/// (otherwise), cleans up remote and local staging, and sets the final state.
void finish_run(RunContext ctx, RunRecord& record, const RunOptions& options);

RunRecord run_workflow_batched(RunContext ctx, const std::string& workflow, const ParamValues& values,
                               const std::vector<InputItem>& items, long long batch_size, const RunOptions& options);

/// Single-batch run.
RunRecord run_workflow(RunContext ctx, const std::string& workflow, const ParamValues& values,
                       const std::vector<InputItem>& items, const RunOptions& options);

/// Issues scancel for every job of the run that has not been seen terminal.
std::vector<std::int64_t> cancel_run(Endpoint& endpoint, const RunRecord& record);

// --- import ---------------------------------------------------------------------------

enum class OutputMode { ImagesFolder, SidecarAttachments, SingleZip };

std::string_view to_string(OutputMode m) noexcept;
std::optional<OutputMode> parse_output_mode(std::string_view s) noexcept;

/// Places the run's results under `destination`; never overwrites.
/// Throws Error{NoResults | CollisionError | CorruptArchive}.
std::vector<std::filesystem::path> import_results(const RunRecord& record, const std::filesystem::path& destination,
                                                  OutputMode mode);

}  // namespace slurmbridge
