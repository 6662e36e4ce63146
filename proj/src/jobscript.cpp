#include "slurmbridge/jobscript.hpp"

#include <charconv>
#include <cstdio>
#include <regex>

#include "slurmbridge/error.hpp"

namespace slurmbridge {

namespace {

constexpr std::string_view kShebang = "#!/bin/bash";
constexpr std::string_view kDirectivePrefix = "#SBATCH";

bool is_flag_style(const std::string& key) { return key.size() >= 2 && key[0] == '-' && key[1] != '-'; }

std::string escape_double_quoted(std::string_view value) {
  std::string out;
  out.reserve(value.size());
  for (char c : value) {
    if (c == '"' || c == '\\' || c == '$' || c == '`') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string container_invocation(const ClusterProfile& profile, std::string_view image_file,
                                 std::string_view bind_specs, std::string_view args) {
  auto cmd = replace_all(profile.container_command, "{image_file}", shell_quote(image_file));
  cmd = replace_all(std::move(cmd), "{bind_specs}", bind_specs);
  cmd = replace_all(std::move(cmd), "{args}", args);
  while (!cmd.empty() && cmd.back() == ' ') cmd.pop_back();
  return cmd;
}

std::vector<Directive> resource_directives(std::string_view job_name, const ResourceSpec& r,
                                           const std::string& logfile, const ClusterProfile& profile) {
  std::vector<Directive> d;
  d.push_back({"--job-name", std::string(job_name)});
  d.push_back({"--mem", std::to_string(r.mem_mb)});
  d.push_back({"--cpus-per-task", std::to_string(r.cpus)});
  if (r.gpus > 0) d.push_back({"--gres", "gpu:" + std::to_string(r.gpus)});
  d.push_back({"--time", format_time_limit(r.time_limit_min)});
  d.push_back({"--output", logfile});
  if (profile.partition) d.push_back({"--partition", *profile.partition});
  if (profile.account) d.push_back({"--account", *profile.account});
  return d;
}

// GPU support is switched on by the allocation itself (Slurm exports SLURM_GPUS_ON_NODE
// for --gres=gpu jobs), so CPU and GPU scripts differ only in their directives.
constexpr std::string_view kWorkflowBinds =
    R"(${SLURM_GPUS_ON_NODE:+--nv} --bind "$IN_PATH":/data/in,"$OUT_PATH":/data/out,"$GT_PATH":/data/gt)";

}  // namespace

std::string workflow_logfile_pattern(std::string_view scratch_dir) {
  return std::string(scratch_dir) + "/logs/omero-job-%j.log";
}

std::string array_logfile_pattern(std::string_view scratch_dir) {
  return std::string(scratch_dir) + "/logs/omero-job-%A_%a.log";
}

std::string workflow_image_file(std::string_view scratch_dir, std::string_view name, std::string_view version) {
  return std::string(scratch_dir) + "/singularity_images/" + std::string(name) + "_" + std::string(version) + ".sif";
}

std::string converter_image_file(std::string_view scratch_dir, const FormatPair& formats,
                                 std::string_view image_reference) {
  return std::string(scratch_dir) + "/singularity_images/" + formats.first + "_to_" + formats.second + "_" +
         image_tag(image_reference) + ".sif";
}

JobScript generate_workflow_script(const WorkflowDescriptor& descriptor, const ResourceSpec& resources,
                                   const ParamValues& values, const RunPaths& paths,
                                   const ClusterProfile& profile) {
  JobScript script;
  script.logfile_path = workflow_logfile_pattern(profile.scratch_dir);
  script.directives = resource_directives(descriptor.name, resources, script.logfile_path, profile);
  script.env_exports = env_assignments(descriptor, values);
  script.env_exports.emplace_back("IN_PATH", paths.in_dir);
  script.env_exports.emplace_back("OUT_PATH", paths.out_dir);
  script.env_exports.emplace_back("GT_PATH", paths.gt_dir);

  std::string args;
  for (const auto& tok : render_cli_args(descriptor, values)) {
    if (!args.empty()) args += ' ';
    args += shell_quote(tok);
  }
  script.body.push_back(container_invocation(profile, paths.image_file, kWorkflowBinds, args));
  return script;
}

JobScript generate_launcher_script(std::string_view workflow_name, const ResourceSpec& resources,
                                   std::string_view image_file, const ClusterProfile& profile) {
  JobScript script;
  script.logfile_path = workflow_logfile_pattern(profile.scratch_dir);
  script.directives = resource_directives(workflow_name, resources, script.logfile_path, profile);
  script.body.push_back(R"(: "${IN_PATH:?}" "${OUT_PATH:?}" "${GT_PATH:?}")");
  // PARAMS is word-split on purpose: it carries the rendered argument list.
  script.body.push_back(container_invocation(profile, image_file, kWorkflowBinds, "$PARAMS"));
  return script;
}

JobScript generate_conversion_script(const ConversionRequest& request, const ClusterProfile& profile) {
  if (request.n_items < 1)
    throw Error(Errc::InvalidCount, "n_items", "need at least one item, got " + std::to_string(request.n_items));
  const FormatPair formats{request.src_format, request.dst_format};
  auto it = profile.converters.find(formats);
  if (it == profile.converters.end())
    throw Error(Errc::UnknownConverter, formats.first + "_to_" + formats.second, "no converter image configured");

  JobScript script;
  script.logfile_path = array_logfile_pattern(profile.scratch_dir);
  script.directives = resource_directives("convert_" + formats.first + "_to_" + formats.second,
                                          kConversionResources, script.logfile_path, profile);
  script.directives.push_back({"--array", "0-" + std::to_string(request.n_items - 1)});
  script.env_exports = {{"DATA_PATH", request.data_dir},
                        {"SRC_FORMAT", request.src_format},
                        {"DST_FORMAT", request.dst_format}};
  script.body = {
      "shopt -s nullglob",
      R"(ITEMS=("$DATA_PATH"/*."$SRC_FORMAT"))",
      R"(ITEM="${ITEMS[$SLURM_ARRAY_TASK_ID]:?no item for task $SLURM_ARRAY_TASK_ID}")",
      container_invocation(profile, converter_image_file(profile.scratch_dir, formats, it->second),
                           R"(--bind "$DATA_PATH":/data)", R"("/data/${ITEM##*/}" "$DST_FORMAT")"),
  };
  return script;
}

std::string render_script(const JobScript& script) {
  std::string out(kShebang);
  out += '\n';
  for (const auto& d : script.directives) {
    out += kDirectivePrefix;
    out += ' ';
    out += d.key;
    if (!d.value.empty()) {
      out += is_flag_style(d.key) ? ' ' : '=';
      out += d.value;
    }
    out += '\n';
  }
  for (const auto& [name, value] : script.env_exports) out += "export " + name + "=\"" + escape_double_quoted(value) + "\"\n";
  for (const auto& line : script.body) out += line + '\n';
  return out;
}

std::vector<Directive> scan_directives(std::string_view text) {
  std::vector<Directive> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() != '#') break;
    if (line.rfind(kDirectivePrefix, 0) != 0) continue;
    auto rest = line.substr(kDirectivePrefix.size());
    const auto start = rest.find_first_not_of(" \t");
    if (start == std::string_view::npos) continue;
    rest = rest.substr(start);
    // key=value, or key<space>value
    const auto space = rest.find_first_of(" \t");
    const auto eq = rest.find('=');
    Directive d;
    if (eq != std::string_view::npos && (space == std::string_view::npos || eq < space) && rest.rfind("--", 0) == 0) {
      d.key = std::string(rest.substr(0, eq));
      d.value = std::string(rest.substr(eq + 1));
    } else if (space != std::string_view::npos) {
      d.key = std::string(rest.substr(0, space));
      auto v = rest.substr(space);
      v.remove_prefix(std::min(v.find_first_not_of(" \t"), v.size()));
      d.value = std::string(v);
    } else {
      d.key = std::string(rest);
    }
    out.push_back(std::move(d));
  }
  return out;
}

EnvList scan_exports(std::string_view text) {
  static const std::regex line_re(R"re(^export ([A-Za-z_][A-Za-z0-9_]*)="((?:[^"\\]|\\.)*)"\s*$)re");
  EnvList out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    std::string value;
    const std::string raw = m[2];
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 1 < raw.size()) ++i;
      value.push_back(raw[i]);
    }
    out.emplace_back(m[1], std::move(value));
  }
  return out;
}

bool satisfies_invariants(const JobScript& script) {
  const auto count = [&](std::string_view key) {
    std::size_t n = 0;
    for (const auto& d : script.directives) n += d.key == key;
    return n;
  };
  if (count("--mem") != 1 || count("--cpus-per-task") != 1 || count("--time") != 1 || count("--output") != 1)
    return false;
  if (count("--gres") > 1) return false;
  if (script.body.empty()) return false;
  static const std::regex env_name(R"(^[A-Z][A-Z0-9_]*$)");
  for (const auto& [name, value] : script.env_exports)
    if (!std::regex_match(name, env_name)) return false;
  return true;
}

std::string format_time_limit(int minutes) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02d:%02d:00", minutes / 60, minutes % 60);
  return buf;
}

long parse_time_limit(std::string_view text) {
  long days = 0;
  bool has_days = false;
  if (auto dash = text.find('-'); dash != std::string_view::npos) {
    has_days = true;
    auto [p, ec] = std::from_chars(text.data(), text.data() + dash, days);
    if (ec != std::errc{} || p != text.data() + dash) return -1;
    text.remove_prefix(dash + 1);
  }
  std::vector<long> parts;
  while (true) {
    const auto colon = text.find(':');
    const auto field = text.substr(0, colon);
    long v = 0;
    auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc{} || p != field.data() + field.size() || v < 0) return -1;
    parts.push_back(v);
    if (colon == std::string_view::npos) break;
    text.remove_prefix(colon + 1);
  }
  if (parts.size() > 3) return -1;
  long seconds = 0;
  if (has_days || parts.size() == 3) {
    // D-HH[:MM[:SS]] or HH:MM:SS
    const long mult[] = {3600, 60, 1};
    for (std::size_t i = 0; i < parts.size(); ++i) seconds += parts[i] * mult[i];
  } else if (parts.size() == 2) {
    seconds = parts[0] * 60 + parts[1];
  } else {
    seconds = parts[0] * 60;
  }
  return days * 86400 + seconds;
}

std::string shell_quote(std::string_view token) {
  static constexpr std::string_view safe =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_./:=,+-@%";
  if (!token.empty() && token.find_first_not_of(safe) == std::string_view::npos) return std::string(token);
  std::string out = "'";
  for (char c : token) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  out += '\'';
  return out;
}

}  // namespace slurmbridge
