#include "slurmbridge/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <regex>
#include <sstream>
#include <vector>

#include "slurmbridge/error.hpp"

namespace slurmbridge {

namespace {

struct IniEntry {
  std::string value;
  int line = 0;
};

struct IniSection {
  std::string name;
  int line = 0;
  std::map<std::string, IniEntry> keys;
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string line_ref(int line) { return "line " + std::to_string(line); }

std::vector<IniSection> parse_ini(std::string_view text) {
  std::vector<IniSection> sections;
  std::map<std::string, int> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw Error(Errc::MalformedConfig, line_ref(line_no), "bad section header '" + line + "'");
      auto name = trim(std::string_view(line).substr(1, line.size() - 2));
      if (name.empty()) throw Error(Errc::MalformedConfig, line_ref(line_no), "empty section name");
      if (auto [it, inserted] = seen.emplace(name, line_no); !inserted)
        throw Error(Errc::MalformedConfig, line_ref(line_no),
                    "section [" + name + "] already defined at line " + std::to_string(it->second));
      sections.push_back({std::move(name), line_no, {}});
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::MalformedConfig, line_ref(line_no), "expected 'key = value'");
    if (sections.empty()) throw Error(Errc::MalformedConfig, line_ref(line_no), "key outside of any section");
    auto key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw Error(Errc::MalformedConfig, line_ref(line_no), "empty key");
    auto& section = sections.back();
    if (section.keys.count(key))
      throw Error(Errc::MalformedConfig, line_ref(line_no), "duplicate key '" + key + "'");
    section.keys.emplace(std::move(key), IniEntry{trim(std::string_view(line).substr(eq + 1)), line_no});
  }
  return sections;
}

class SectionReader {
 public:
  explicit SectionReader(const IniSection& section) : section_(section) {}

  std::optional<std::string> get(const std::string& key) {
    used_.push_back(key);
    auto it = section_.keys.find(key);
    if (it == section_.keys.end() || it->second.value.empty()) return std::nullopt;
    return it->second.value;
  }

  std::string require(const std::string& key) {
    auto v = get(key);
    if (!v) throw Error(Errc::InvalidValue, qualified(key), "required key is missing");
    return *v;
  }

  std::optional<int> get_int(const std::string& key, int min_value) {
    auto v = get(key);
    if (!v) return std::nullopt;
    int out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size())
      throw Error(Errc::InvalidValue, qualified(key), "'" + *v + "' is not an integer");
    if (out < min_value)
      throw Error(Errc::InvalidValue, qualified(key), "must be >= " + std::to_string(min_value));
    return out;
  }

  std::optional<double> get_double(const std::string& key) {
    auto v = get(key);
    if (!v) return std::nullopt;
    double out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size() || out <= 0)
      throw Error(Errc::InvalidValue, qualified(key), "'" + *v + "' is not a positive number");
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, entry] : section_.keys)
      if (std::find(used_.begin(), used_.end(), key) == used_.end())
        throw Error(Errc::InvalidValue, qualified(key), "unknown key at " + line_ref(entry.line));
  }

  std::string qualified(const std::string& key) const { return section_.name + "." + key; }
  const IniSection& section() const { return section_; }

 private:
  const IniSection& section_;
  std::vector<std::string> used_;
};

struct PartialResources {
  std::optional<int> mem_mb, cpus, gpus, time_limit_min;

  static PartialResources read(SectionReader& r) {
    return {r.get_int("mem_mb", 1), r.get_int("cpus", 1), r.get_int("gpus", 0), r.get_int("time_limit_min", 1)};
  }

  ResourceSpec over(const ResourceSpec& base) const {
    return {mem_mb.value_or(base.mem_mb), cpus.value_or(base.cpus), gpus.value_or(base.gpus),
            time_limit_min.value_or(base.time_limit_min)};
  }
};

bool looks_like_url(const std::string& s) {
  static const std::regex url(R"(^[A-Za-z][A-Za-z0-9+.\-]*://[^/\s]+(/\S*)?$)");
  return std::regex_match(s, url);
}

std::filesystem::path resolve_path(const std::string& value, const std::filesystem::path& base_dir) {
  std::filesystem::path p(value);
  if (p.is_relative() && !base_dir.empty()) return base_dir / p;
  return p;
}

std::string repo_basename(std::string url) {
  while (!url.empty() && url.back() == '/') url.pop_back();
  auto slash = url.find_last_of('/');
  std::string base = slash == std::string::npos ? url : url.substr(slash + 1);
  if (base.size() > 4 && base.compare(base.size() - 4, 4, ".git") == 0) base.resize(base.size() - 4);
  std::transform(base.begin(), base.end(), base.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return base;
}

}  // namespace

ClusterConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  const auto sections = parse_ini(text);
  const IniSection* ssh = nullptr;
  const IniSection* cluster = nullptr;
  const IniSection* registry = nullptr;
  const IniSection* defaults = nullptr;
  const IniSection* converters = nullptr;
  std::vector<const IniSection*> workflows;

  for (const auto& s : sections) {
    if (s.name == "ssh") ssh = &s;
    else if (s.name == "cluster") cluster = &s;
    else if (s.name == "registry") registry = &s;
    else if (s.name == "defaults") defaults = &s;
    else if (s.name == "converters") converters = &s;
    else if (s.name.rfind("workflow.", 0) == 0) workflows.push_back(&s);
    else throw Error(Errc::InvalidValue, s.name, "unknown section at " + line_ref(s.line));
  }
  if (!ssh) throw Error(Errc::MissingSection, "ssh", "the [ssh] section is required");
  if (!cluster) throw Error(Errc::MissingSection, "cluster", "the [cluster] section is required");

  ClusterConfig cfg;
  auto& profile = cfg.profile;
  {
    SectionReader r(*ssh);
    profile.host = r.require("host");
    profile.user = r.require("user");
    profile.port = r.get_int("port", 1).value_or(22);
    if (profile.port > 65535) throw Error(Errc::InvalidValue, "ssh.port", "port out of range");
    if (auto key = r.get("key_path")) profile.key_path = *key;
    r.reject_unknown();
  }
  {
    SectionReader r(*cluster);
    profile.scratch_dir = r.require("scratch_dir");
    if (profile.scratch_dir.front() != '/')
      throw Error(Errc::InvalidValue, "cluster.scratch_dir", "must be an absolute path");
    while (profile.scratch_dir.size() > 1 && profile.scratch_dir.back() == '/') profile.scratch_dir.pop_back();
    profile.partition = r.get("partition");
    profile.account = r.get("account");
    if (auto cmd = r.get("container_command")) profile.container_command = *cmd;
    if (auto poll = r.get_double("poll_interval_s")) profile.poll_interval_s = *poll;
    r.reject_unknown();
  }
  if (converters) {
    for (const auto& [key, entry] : converters->keys) {
      const auto sep = key.find("_to_");
      if (sep == std::string::npos || sep == 0 || sep + 4 >= key.size())
        throw Error(Errc::InvalidValue, "converters." + key, "expected '<src>_to_<dst>'");
      if (entry.value.empty()) throw Error(Errc::InvalidValue, "converters." + key, "empty image reference");
      profile.converters[{key.substr(0, sep), key.substr(sep + 4)}] = entry.value;
    }
  }

  auto& reg = cfg.registry;
  if (registry) {
    SectionReader r(*registry);
    reg.registry_namespace = r.get("namespace").value_or("");
    while (!reg.registry_namespace.empty() && reg.registry_namespace.back() == '/') reg.registry_namespace.pop_back();
    r.reject_unknown();
  }
  if (defaults) {
    SectionReader r(*defaults);
    reg.defaults = PartialResources::read(r).over(kFallbackResources);
    r.reject_unknown();
  }

  static const std::regex name_pattern(R"(^[A-Za-z0-9_.\-]+$)");
  for (const auto* section : workflows) {
    const auto name = section->name.substr(std::string("workflow.").size());
    if (!std::regex_match(name, name_pattern))
      throw Error(Errc::InvalidValue, section->name, "invalid workflow name");
    SectionReader r(*section);
    WorkflowEntry e;
    e.repo_url = r.require("repo");
    if (!looks_like_url(e.repo_url)) throw Error(Errc::InvalidValue, r.qualified("repo"), "not a URL: " + e.repo_url);
    e.version = r.require("version");
    e.resources = PartialResources::read(r).over(reg.defaults);
    e.image = r.get("image");
    if (auto script = r.get("job_script")) {
      e.job_script = resolve_path(*script, base_dir);
      e.job_script_source = JobScriptSource::RepoProvided;
    }
    if (auto desc = r.get("descriptor")) e.descriptor = resolve_path(*desc, base_dir);
    if (auto fmt = r.get("input_format")) {
      if (*fmt != "tiff" && *fmt != "zarr")
        throw Error(Errc::InvalidValue, r.qualified("input_format"), "expected 'tiff' or 'zarr'");
      e.input_format = *fmt;
    }
    r.reject_unknown();
    if (!e.image && reg.registry_namespace.empty())
      throw Error(Errc::InvalidValue, "registry.namespace",
                  "needed to derive the image of workflow '" + name + "' (or set its 'image' key)");
    reg.entries.emplace(name, std::move(e));
  }
  return cfg;
}

ClusterConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MalformedConfig, path.string(), "cannot read configuration file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

ResourceSpec effective_resources(const WorkflowRegistry& registry, std::string_view name) {
  auto it = registry.entries.find(std::string(name));
  if (it == registry.entries.end()) throw Error(Errc::UnknownWorkflow, std::string(name), "not in registry");
  return it->second.resources;
}

ResolvedWorkflow resolve_workflow(const WorkflowRegistry& registry, std::string_view name) {
  auto it = registry.entries.find(std::string(name));
  if (it == registry.entries.end()) throw Error(Errc::UnknownWorkflow, std::string(name), "not in registry");
  const auto& e = it->second;
  ResolvedWorkflow out{e.repo_url, e.version, {}, true};
  out.image_reference = e.image ? *e.image
                                : registry.registry_namespace + "/" + repo_basename(e.repo_url) + ":" + e.version;
  out.reproducible = e.version != "latest" && image_tag(out.image_reference) != "latest";
  return out;
}

std::string image_tag(std::string_view image_reference) {
  const auto slash = image_reference.find_last_of('/');
  const auto colon = image_reference.find_last_of(':');
  if (colon == std::string_view::npos || (slash != std::string_view::npos && colon < slash)) return "latest";
  return std::string(image_reference.substr(colon + 1));
}

}  // namespace slurmbridge
