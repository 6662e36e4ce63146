#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "slurmbridge/config.hpp"
#include "slurmbridge/descriptor.hpp"

namespace slurmbridge {

/// One `#SBATCH` line. Keys carry their dashes ("--mem", "-p").
struct Directive {
  std::string key;
  std::string value;

  bool operator==(const Directive&) const = default;
};

struct JobScript {
  std::vector<Directive> directives;
  EnvList env_exports;
  std::vector<std::string> body;
  std::string logfile_path;

  bool operator==(const JobScript&) const = default;
};

/// Remote locations one workflow job operates on.
struct RunPaths {
  std::string in_dir;
  std::string out_dir;
  std::string gt_dir;
  std::string image_file;
};

struct ConversionRequest {
  int n_items = 0;
  std::string src_format;
  std::string dst_format;
  std::string data_dir;
};

/// Resources requested by each conversion array task.
inline constexpr ResourceSpec kConversionResources{4096, 1, 0, 60};

/// `<scratch>/logs/omero-job-%j.log`
std::string workflow_logfile_pattern(std::string_view scratch_dir);
/// `<scratch>/logs/omero-job-%A_%a.log` (one log per array task).
std::string array_logfile_pattern(std::string_view scratch_dir);

/// `<scratch>/singularity_images/<name>_<version>.sif`
std::string workflow_image_file(std::string_view scratch_dir, std::string_view name, std::string_view version);
/// `<scratch>/singularity_images/<src>_to_<dst>_<tag>.sif`
std::string converter_image_file(std::string_view scratch_dir, const FormatPair& formats,
                                 std::string_view image_reference);

/// Workflow job: resource directives, parameter + IN/OUT/GT_PATH exports, one
/// container invocation built from the profile's runtime command template.
JobScript generate_workflow_script(const WorkflowDescriptor& descriptor, const ResourceSpec& resources,
                                   const ParamValues& values, const RunPaths& paths,
                                   const ClusterProfile& profile);

/// Launcher placed in `slurm-scripts/jobs/` at provisioning time. Paths and
/// parameters arrive through the submission environment; arguments are
/// forwarded from the PARAMS variable.
JobScript generate_launcher_script(std::string_view workflow_name, const ResourceSpec& resources,
                                   std::string_view image_file, const ClusterProfile& profile);

/// Array job converting every `*.<src>` item under data_dir, one task per item.
/// Throws Error{InvalidCount | UnknownConverter}.
JobScript generate_conversion_script(const ConversionRequest& request, const ClusterProfile& profile);

/// Deterministic text: shebang, directives, exports, body.
std::string render_script(const JobScript& script);

/// Recovers the `#SBATCH` directives of a rendered script, in order. Scanning
/// stops at the first line that is neither blank nor a comment.
std::vector<Directive> scan_directives(std::string_view text);

/// Recovers `export NAME="value"` lines, undoing render_script's escaping.
EnvList scan_exports(std::string_view text);

/// True when the directive/body/export invariants hold.
bool satisfies_invariants(const JobScript& script);

/// Minutes -> "HH:MM:SS" (hours keep growing past 99).
std::string format_time_limit(int minutes);
/// Accepts "MM", "MM:SS", "HH:MM:SS", "D-HH", "D-HH:MM", "D-HH:MM:SS"; returns seconds, or -1.
long parse_time_limit(std::string_view text);

/// POSIX-shell quoting; safe tokens are returned unchanged.
std::string shell_quote(std::string_view token);

}  // namespace slurmbridge
