#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace slurmbridge {

/// Hardware request for one job. All fields are resolved (never absent).
struct ResourceSpec {
  int mem_mb = 4096;
  int cpus = 2;
  int gpus = 0;
  int time_limit_min = 60;

  bool operator==(const ResourceSpec&) const = default;
};

/// Fallbacks used when neither `[defaults]` nor the workflow section sets a field.
inline constexpr ResourceSpec kFallbackResources{4096, 2, 0, 60};

inline constexpr std::string_view kDefaultContainerCommand = "singularity exec {bind_specs} {image_file} {args}";

/// (source format, destination format), e.g. ("zarr", "tiff").
using FormatPair = std::pair<std::string, std::string>;

struct ClusterProfile {
  std::string host;
  int port = 22;
  std::string user;
  std::filesystem::path key_path;
  std::string scratch_dir;
  std::optional<std::string> partition;
  std::optional<std::string> account;
  std::map<FormatPair, std::string> converters;
  std::string container_command{kDefaultContainerCommand};
  double poll_interval_s = 10.0;

  bool operator==(const ClusterProfile&) const = default;
};

enum class JobScriptSource { Generated, RepoProvided };

struct WorkflowEntry {
  std::string repo_url;
  std::string version;
  ResourceSpec resources;
  JobScriptSource job_script_source = JobScriptSource::Generated;
  std::optional<std::string> image;                  // overrides the derived reference
  std::optional<std::filesystem::path> job_script;   // local copy of the repo-provided script
  std::optional<std::filesystem::path> descriptor;   // local copy of descriptor.json
  std::string input_format = "tiff";                 // format the container reads

  bool operator==(const WorkflowEntry&) const = default;
};

struct WorkflowRegistry {
  std::string registry_namespace;
  ResourceSpec defaults = kFallbackResources;
  std::map<std::string, WorkflowEntry> entries;

  bool operator==(const WorkflowRegistry&) const = default;
};

struct ClusterConfig {
  ClusterProfile profile;
  WorkflowRegistry registry;

  bool operator==(const ClusterConfig&) const = default;
};

/// Parses the INI configuration. Relative file paths in the document resolve
/// against `base_dir`. Throws Error{MalformedConfig | MissingSection | InvalidValue}.
ClusterConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

/// Reads and parses a configuration file; relative paths resolve against its directory.
ClusterConfig load_config(const std::filesystem::path& path);

/// Throws Error{UnknownWorkflow}.
ResourceSpec effective_resources(const WorkflowRegistry& registry, std::string_view name);

struct ResolvedWorkflow {
  std::string repo_url;
  std::string version;
  std::string image_reference;
  bool reproducible = true;  // false for floating tags such as "latest"

  bool operator==(const ResolvedWorkflow&) const = default;
};

/// Image reference is `<namespace>/<lowercased repo basename>:<version>` unless
/// the entry overrides it. Throws Error{UnknownWorkflow}.
ResolvedWorkflow resolve_workflow(const WorkflowRegistry& registry, std::string_view name);

/// Tag portion of an image reference ("latest" when absent).
std::string image_tag(std::string_view image_reference);

}  // namespace slurmbridge
