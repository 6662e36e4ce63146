#include "slurmbridge/sim_cluster.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "slurmbridge/archive.hpp"
#include "slurmbridge/digest.hpp"
#include "slurmbridge/error.hpp"
#include "slurmbridge/jobscript.hpp"

namespace slurmbridge {

namespace {

using json = nlohmann::json;

ExecResult ok(std::string out = {}) { return {0, std::move(out), {}, 0}; }
ExecResult fail(int code, std::string err) { return {code, {}, std::move(err) + "\n", 0}; }

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<int> parse_mem_mb(std::string_view s) {
  if (s.empty()) return std::nullopt;
  long mult = 1;
  const char unit = s.back();
  if (unit == 'K' || unit == 'k') mult = -1024;
  else if (unit == 'M' || unit == 'm') mult = 1;
  else if (unit == 'G' || unit == 'g') mult = 1024;
  else if (unit == 'T' || unit == 't') mult = 1024 * 1024;
  if (!std::isdigit(static_cast<unsigned char>(unit))) s.remove_suffix(1);
  auto v = parse_number<long>(s);
  if (!v || *v < 0) return std::nullopt;
  return static_cast<int>(mult < 0 ? (*v + 1023) / 1024 : *v * mult);
}

std::optional<int> parse_gpus(std::string_view gres) {
  if (gres.rfind("gpu", 0) != 0) return std::nullopt;
  const auto colon = gres.find_last_of(':');
  if (colon == std::string_view::npos) return 1;
  return parse_number<int>(gres.substr(colon + 1));
}

std::string basename_of(const std::string& p) {
  const auto slash = p.find_last_of('/');
  return slash == std::string::npos ? p : p.substr(slash + 1);
}

std::string parent_of(const std::string& p) {
  const auto slash = p.find_last_of('/');
  if (slash == std::string::npos || slash == 0) return "/";
  return p.substr(0, slash);
}

std::string stem_of(const std::string& name) {
  const auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

bool under(const std::string& path, const std::string& prefix) {
  if (prefix == "/") return true;
  return path == prefix || (path.size() > prefix.size() && path.compare(0, prefix.size(), prefix) == 0 &&
                            path[prefix.size()] == '/');
}

std::string seconds_text(SimTime t) {
  std::ostringstream s;
  s << t.count() / 1000;
  if (t.count() % 1000) s << '.' << std::to_string(t.count() % 1000 + 1000).substr(1);
  return s.str();
}

std::string base64_encode(const std::string& data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(data.data()), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.empty()) return {};
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw std::runtime_error("simulator state: bad base64 payload");
  std::size_t pad = 0;
  if (text.size() >= 1 && text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace

std::string normalize_remote_path(std::string_view path, std::string_view cwd) {
  std::string full;
  if (!path.empty() && path.front() == '/') full = std::string(path);
  else full = std::string(cwd.empty() ? "/" : cwd) + "/" + std::string(path);
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= full.size()) {
    auto slash = full.find('/', pos);
    if (slash == std::string::npos) slash = full.size();
    const auto seg = full.substr(pos, slash - pos);
    pos = slash + 1;
    if (seg.empty() || seg == ".") continue;
    if (seg == "..") {
      if (!parts.empty()) parts.pop_back();
      continue;
    }
    parts.push_back(seg);
  }
  std::string out;
  for (const auto& p : parts) out += "/" + p;
  return out.empty() ? "/" : out;
}

// --- topology / events ------------------------------------------------------

SimTopology SimTopology::parse(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedDocument, "topology", e.what());
  }
  SimTopology t;
  t.nodes.clear();
  try {
    for (const auto& n : doc.at("nodes")) {
      SimNode node{n.value("cpus", 4), n.value("gpus", 0), n.value("mem_mb", 16384)};
      if (node.cpus <= 0 || node.gpus < 0 || node.mem_mb <= 0)
        throw Error(Errc::InvalidValue, "topology.nodes", "node resources must be positive");
      t.nodes.push_back(node);
    }
    t.default_duration = std::chrono::seconds(doc.value("default_duration_s", 30));
    t.partitions = doc.value("partitions", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidValue, "topology", e.what());
  }
  if (t.nodes.empty()) throw Error(Errc::InvalidValue, "topology.nodes", "at least one node is required");
  return t;
}

std::string SimEvent::to_string() const {
  std::string s = "t=" + seconds_text(time) + " job=" + std::to_string(job_id);
  if (task) s += "_" + std::to_string(*task);
  s += " ";
  s += slurmbridge::to_string(from);
  s += "->";
  s += slurmbridge::to_string(to);
  return s;
}

JobState SimJob::state() const {
  if (!array) return tasks.front().state;
  std::vector<JobState> states;
  states.reserve(tasks.size());
  for (const auto& t : tasks) states.push_back(t.state);
  return aggregate_array_state(states);
}

// --- cluster ------------------------------------------------------------------

SimCluster::SimCluster(SimTopology topology) : topology_(std::move(topology)) {
  if (topology_.nodes.empty()) throw std::invalid_argument("SimCluster: no nodes");
  used_.assign(topology_.nodes.size(), SimNode{0, 0, 0});
}

ExecResult SimCluster::exec(const std::vector<std::string>& argv, const ExecOptions& options) {
  std::lock_guard lock(mutex_);
  return exec_locked(argv, options);
}

ExecResult SimCluster::exec_locked(const std::vector<std::string>& argv, const ExecOptions& options) {
  if (argv.empty()) return fail(127, "empty command");
  const std::string cwd = options.cwd ? normalize_remote_path(*options.cwd) : "/";
  if (!dir_exists(cwd)) return fail(1, "cd: " + cwd + ": No such file or directory");
  const auto& cmd = argv.front();
  if (cmd == "sbatch") return cmd_sbatch(argv, cwd, options.env);
  if (cmd == "sacct") return cmd_sacct(argv);
  if (cmd == "scancel") return cmd_scancel(argv);
  if (cmd == "mkdir") return cmd_mkdir(argv, cwd);
  if (cmd == "test") return cmd_test(argv, cwd);
  if (cmd == "rm") return cmd_rm(argv, cwd);
  if (cmd == "mv") return cmd_mv(argv, cwd);
  if (cmd == "zip") return cmd_zip(argv, cwd);
  if (cmd == "unzip") return cmd_unzip(argv, cwd);
  if (cmd == "sha256sum") return cmd_sha256sum(argv, cwd);
  if (cmd == "singularity") return cmd_singularity(argv, cwd);
  if (cmd == "cat") return cmd_cat(argv, cwd);
  if (cmd == "ls") return cmd_ls(argv, cwd);
  if (cmd == "true") return ok();
  if (cmd == "false") return {1, {}, {}, 0};
  if (cmd == "echo") {
    std::string out;
    for (std::size_t i = 1; i < argv.size(); ++i) out += (i > 1 ? " " : "") + argv[i];
    return ok(out + "\n");
  }
  if (cmd == "sleep") {
    const auto s = argv.size() > 1 ? parse_number<double>(argv[1]) : std::nullopt;
    if (!s || *s < 0) return fail(1, "sleep: invalid time interval");
    return {0, {}, {}, static_cast<std::int64_t>(*s * 1000)};
  }
  return fail(127, cmd + ": command not found");
}

ExecResult SimCluster::cmd_sbatch(const std::vector<std::string>& argv, const std::string& cwd, const EnvList& env) {
  std::string script_arg;
  for (std::size_t i = 1; i < argv.size(); ++i)
    if (argv[i].empty() || argv[i].front() != '-') {
      script_arg = argv[i];
      break;
    }
  if (script_arg.empty()) return fail(1, "sbatch: error: no batch script given");
  const auto path = normalize_remote_path(script_arg, cwd);
  auto text = files_.find(path);
  if (text == files_.end()) return fail(1, "sbatch: error: Unable to open file " + script_arg);

  SimJob job;
  job.script_path = path;
  job.script_text = text->second;
  job.duration = topology_.default_duration;
  job.submitted = clock_;
  for (const auto& d : scan_directives(job.script_text)) {
    if (d.key == "--cpus-per-task" || d.key == "-c") {
      auto v = parse_number<int>(d.value);
      if (!v || *v < 1) return fail(1, "sbatch: error: Invalid --cpus-per-task argument: " + d.value);
      job.cpus = *v;
    } else if (d.key == "--mem") {
      auto v = parse_mem_mb(d.value);
      if (!v) return fail(1, "sbatch: error: Invalid --mem specification");
      job.mem_mb = *v;
    } else if (d.key == "--gres") {
      auto v = parse_gpus(d.value);
      if (!v || *v < 0) return fail(1, "sbatch: error: Invalid generic resource (gres) specification");
      job.gpus = *v;
    } else if (d.key == "--time" || d.key == "-t") {
      const long secs = parse_time_limit(d.value);
      if (secs <= 0) return fail(1, "sbatch: error: Invalid time limit specification");
      job.time_limit = SimTime(secs * 1000);
    } else if (d.key == "--output" || d.key == "-o") {
      job.logfile_pattern = normalize_remote_path(d.value, cwd);
    } else if (d.key == "--array" || d.key == "-a") {
      auto spec = std::string_view(d.value);
      spec = spec.substr(0, spec.find('%'));
      const auto dash = spec.find('-');
      auto lo = parse_number<int>(spec.substr(0, dash));
      auto hi = dash == std::string_view::npos ? lo : parse_number<int>(spec.substr(dash + 1));
      if (!lo || !hi || *lo < 0 || *hi < *lo) return fail(1, "sbatch: error: Invalid job array specification");
      job.array = std::make_pair(*lo, *hi);
    } else if (d.key == "--partition" || d.key == "-p") {
      const auto& parts = topology_.partitions;
      if (!parts.empty() && std::find(parts.begin(), parts.end(), d.value) == parts.end())
        return fail(1, "sbatch: error: Batch job submission failed: Invalid partition name specified");
    }
  }
  // #SIM duration=<s> outputs=<n>
  std::istringstream lines(job.script_text);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("#SIM", 0) != 0) continue;
    std::istringstream words(line.substr(4));
    for (std::string w; words >> w;) {
      const auto eq = w.find('=');
      if (eq == std::string::npos) continue;
      const auto key = w.substr(0, eq);
      const auto val = std::string_view(w).substr(eq + 1);
      if (key == "duration") {
        if (auto s = parse_number<double>(val); s && *s >= 0) job.duration = SimTime(static_cast<std::int64_t>(*s * 1000));
      } else if (key == "outputs") {
        if (auto n = parse_number<int>(val); n && *n >= 0) job.outputs = *n;
      }
    }
  }
  if (job.logfile_pattern.empty())
    job.logfile_pattern = normalize_remote_path(job.array ? "slurm-%A_%a.out" : "slurm-%j.out", cwd);

  job.env = env;
  for (auto& [k, v] : scan_exports(job.script_text)) {
    auto it = std::find_if(job.env.begin(), job.env.end(), [&](const auto& e) { return e.first == k; });
    if (it != job.env.end()) it->second = v;
    else job.env.emplace_back(k, v);
  }

  job.id = next_job_id_++;
  const int n_tasks = job.array ? job.array->second - job.array->first + 1 : 1;
  job.tasks.assign(static_cast<std::size_t>(n_tasks), SimTask{});
  job.unschedulable = !ever_fits(job);
  apply_faults(job);
  for (int i = 0; i < n_tasks; ++i) queue_.push_back({job.id, i});
  const auto id = job.id;
  jobs_.emplace(id, std::move(job));
  return ok("Submitted batch job " + std::to_string(id) + "\n");
}

ExecResult SimCluster::cmd_sacct(const std::vector<std::string>& argv) {
  std::string list;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if ((argv[i] == "-j" || argv[i] == "--jobs") && i + 1 < argv.size()) list = argv[++i];
    else if (argv[i].rfind("--jobs=", 0) == 0) list = argv[i].substr(7);
  }
  std::set<std::int64_t> ids;
  std::size_t pos = 0;
  while (pos < list.size()) {
    auto comma = list.find(',', pos);
    if (comma == std::string::npos) comma = list.size();
    auto token = std::string_view(list).substr(pos, comma - pos);
    token = token.substr(0, token.find('_'));
    if (auto id = parse_number<std::int64_t>(token)) ids.insert(*id);
    pos = comma + 1;
  }
  std::string out;
  for (auto id : ids) {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) continue;
    const auto& job = it->second;
    if (!job.array) {
      out += std::to_string(id) + "|" + std::string(to_string(job.tasks.front().state)) + "\n";
      continue;
    }
    for (std::size_t t = 0; t < job.tasks.size(); ++t)
      out += std::to_string(id) + "_" + std::to_string(job.array->first + static_cast<int>(t)) + "|" +
             std::string(to_string(job.tasks[t].state)) + "\n";
  }
  return ok(out);
}

ExecResult SimCluster::cmd_scancel(const std::vector<std::string>& argv) {
  std::vector<SimEvent> events;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i].front() == '-') continue;
    auto id = parse_number<std::int64_t>(argv[i]);
    auto it = id ? jobs_.find(*id) : jobs_.end();
    if (it == jobs_.end())
      return fail(1, "scancel: error: Kill job error on job id " + argv[i] + ": Invalid job id specified");
    cancel_job(it->second, events);
  }
  schedule(events);
  return ok();
}

ExecResult SimCluster::cmd_mkdir(const std::vector<std::string>& argv, const std::string& cwd) {
  bool parents = false;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i] == "-p") {
      parents = true;
      continue;
    }
    const auto p = normalize_remote_path(argv[i], cwd);
    if (!writable(p)) return fail(1, "mkdir: cannot create directory '" + argv[i] + "': Permission denied");
    if (parents) {
      if (!mkdirs(p)) return fail(1, "mkdir: cannot create directory '" + argv[i] + "': Not a directory");
    } else {
      if (dir_exists(p) || file_exists(p)) return fail(1, "mkdir: cannot create directory '" + argv[i] + "': File exists");
      if (!dir_exists(parent_of(p))) return fail(1, "mkdir: cannot create directory '" + argv[i] + "': No such file or directory");
      dirs_.insert(p);
    }
  }
  return ok();
}

ExecResult SimCluster::cmd_test(const std::vector<std::string>& argv, const std::string& cwd) {
  if (argv.size() != 3) return {2, {}, "test: expected '<flag> <path>'\n", 0};
  const auto p = normalize_remote_path(argv[2], cwd);
  bool result = false;
  if (argv[1] == "-e") result = dir_exists(p) || file_exists(p);
  else if (argv[1] == "-d") result = dir_exists(p);
  else if (argv[1] == "-f") result = file_exists(p);
  else return {2, {}, "test: unsupported flag " + argv[1] + "\n", 0};
  return {result ? 0 : 1, {}, {}, 0};
}

ExecResult SimCluster::cmd_rm(const std::vector<std::string>& argv, const std::string& cwd) {
  bool recursive = false, force = false;
  std::vector<std::string> targets;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i].size() > 1 && argv[i].front() == '-') {
      recursive |= argv[i].find_first_of("rR") != std::string::npos;
      force |= argv[i].find('f') != std::string::npos;
    } else {
      targets.push_back(normalize_remote_path(argv[i], cwd));
    }
  }
  for (const auto& p : targets) {
    if (!dir_exists(p) && !file_exists(p)) {
      if (!force) return fail(1, "rm: cannot remove '" + p + "': No such file or directory");
      continue;
    }
    if (p == "/" || !writable(p)) return fail(1, "rm: cannot remove '" + p + "': Permission denied");
    if (dir_exists(p) && !recursive) return fail(1, "rm: cannot remove '" + p + "': Is a directory");
    remove_path(p);
  }
  return ok();
}

ExecResult SimCluster::cmd_mv(const std::vector<std::string>& argv, const std::string& cwd) {
  std::vector<std::string> args;
  for (std::size_t i = 1; i < argv.size(); ++i)
    if (argv[i] != "-f") args.push_back(argv[i]);
  if (args.size() != 2) return fail(1, "mv: expected <source> <destination>");
  const auto src = normalize_remote_path(args[0], cwd);
  auto dst = normalize_remote_path(args[1], cwd);
  if (!dir_exists(src) && !file_exists(src)) return fail(1, "mv: cannot stat '" + args[0] + "': No such file or directory");
  if (dir_exists(dst)) dst += "/" + basename_of(src);
  if (!dir_exists(parent_of(dst))) return fail(1, "mv: cannot move to '" + args[1] + "': No such file or directory");
  if (!writable(src) || !writable(dst)) return fail(1, "mv: cannot move '" + args[0] + "': Permission denied");
  if (under(dst, src)) return fail(1, "mv: cannot move a directory into itself");
  if (file_exists(src)) {
    files_[dst] = std::move(files_[src]);
    files_.erase(src);
    return ok();
  }
  std::map<std::string, std::string> moved_files;
  std::set<std::string> moved_dirs;
  for (auto it = files_.begin(); it != files_.end();) {
    if (under(it->first, src)) {
      moved_files.emplace(dst + it->first.substr(src.size()), std::move(it->second));
      it = files_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = dirs_.begin(); it != dirs_.end();) {
    if (under(*it, src)) {
      moved_dirs.insert(dst + it->substr(src.size()));
      it = dirs_.erase(it);
    } else {
      ++it;
    }
  }
  files_.merge(moved_files);
  dirs_.merge(moved_dirs);
  return ok();
}

ExecResult SimCluster::cmd_zip(const std::vector<std::string>& argv, const std::string& cwd) {
  bool recursive = false;
  std::vector<std::string> args;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i].size() > 1 && argv[i].front() == '-') recursive |= argv[i].find('r') != std::string::npos;
    else args.push_back(argv[i]);
  }
  if (args.size() < 2) return fail(16, "zip error: Invalid command arguments");
  const auto archive = normalize_remote_path(args[0], cwd);
  std::map<std::string, std::string> entries;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const auto p = normalize_remote_path(args[i], cwd);
    std::string prefix = args[i];
    while (prefix.rfind("./", 0) == 0) prefix = prefix.substr(2);
    if (prefix == ".") prefix.clear();
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    if (file_exists(p) && p != archive) {
      entries[prefix] = files_.at(p);
    } else if (dir_exists(p) && recursive) {
      for (const auto& [path, data] : files_)
        if (under(path, p) && path != p && path != archive) {
          const auto rel = path.substr(p == "/" ? 1 : p.size() + 1);
          entries[prefix.empty() ? rel : prefix + "/" + rel] = data;
        }
    } else if (!dir_exists(p)) {
      return fail(12, "zip warning: name not matched: " + args[i]);
    }
  }
  if (entries.empty()) return fail(12, "zip error: Nothing to do! (" + args[0] + ")");
  std::vector<ArchiveEntry> list;
  for (auto& [name, data] : entries) list.push_back({name, data});
  if (!put(archive, zip_bytes(list))) return fail(15, "zip error: Could not create output file (" + args[0] + ")");
  return ok();
}

ExecResult SimCluster::cmd_unzip(const std::vector<std::string>& argv, const std::string& cwd) {
  std::string zip_arg, dest = cwd;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i] == "-d" && i + 1 < argv.size()) dest = normalize_remote_path(argv[++i], cwd);
    else if (argv[i].front() != '-' && zip_arg.empty()) zip_arg = argv[i];
  }
  const auto zip_path = normalize_remote_path(zip_arg, cwd);
  auto it = files_.find(zip_path);
  if (it == files_.end()) return fail(9, "unzip: cannot find or open " + zip_arg);
  std::vector<ArchiveEntry> entries;
  try {
    entries = read_zip(it->second);
  } catch (const Error& e) {
    return fail(9, std::string("unzip: ") + e.what());
  }
  if (!mkdirs(dest)) return fail(1, "unzip: cannot create extraction directory: " + dest);
  for (auto& e : entries) {
    const auto target = normalize_remote_path(e.name, dest);
    if (!mkdirs(parent_of(target)) || !put(target, std::move(e.data)))
      return fail(50, "unzip: cannot write " + target);
  }
  return ok();
}

ExecResult SimCluster::cmd_sha256sum(const std::vector<std::string>& argv, const std::string& cwd) {
  if (argv.size() < 2) return fail(1, "sha256sum: missing operand");
  std::string out;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    const auto p = normalize_remote_path(argv[i], cwd);
    auto it = files_.find(p);
    if (it == files_.end()) return fail(1, "sha256sum: " + argv[i] + ": No such file or directory");
    out += sha256_hex(it->second) + "  " + argv[i] + "\n";
  }
  return ok(out);
}

ExecResult SimCluster::cmd_singularity(const std::vector<std::string>& argv, const std::string& cwd) {
  if (argv.size() < 2 || argv[1] != "pull") return fail(255, "FATAL: only 'singularity pull' is simulated");
  bool force = false;
  std::vector<std::string> args;
  for (std::size_t i = 2; i < argv.size(); ++i) {
    if (argv[i] == "--force" || argv[i] == "-F") force = true;
    else args.push_back(argv[i]);
  }
  if (args.size() != 2) return fail(255, "FATAL: usage: singularity pull <image.sif> <uri>");
  const auto dest = normalize_remote_path(args[0], cwd);
  const auto& uri = args[1];
  if (file_exists(dest) && !force) return fail(255, "FATAL: Image file already exists: \"" + dest + "\" - will not overwrite");
  for (const auto& pattern : failing_pulls_)
    if (uri.find(pattern) != std::string::npos)
      return fail(255, "FATAL: While making image from oci registry: failed to get checksum for " + uri);
  if (!dir_exists(parent_of(dest)) || !put(dest, "SIF placeholder for " + uri + "\n"))
    return fail(255, "FATAL: could not open image " + dest + " for writing");
  return ok();
}

ExecResult SimCluster::cmd_cat(const std::vector<std::string>& argv, const std::string& cwd) {
  std::string out;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    auto it = files_.find(normalize_remote_path(argv[i], cwd));
    if (it == files_.end()) return fail(1, "cat: " + argv[i] + ": No such file or directory");
    out += it->second;
  }
  return ok(out);
}

ExecResult SimCluster::cmd_ls(const std::vector<std::string>& argv, const std::string& cwd) {
  const auto p = normalize_remote_path(argv.size() > 1 ? argv.back() : ".", cwd);
  if (file_exists(p)) return ok(argv.back() + "\n");
  if (!dir_exists(p)) return fail(2, "ls: cannot access '" + p + "': No such file or directory");
  std::string out;
  for (const auto& c : children(p)) out += c + "\n";
  return ok(out);
}

// --- scheduling -----------------------------------------------------------------

bool SimCluster::fits(const SimJob& job, const SimNode& used, const SimNode& cap) const {
  return used.cpus + job.cpus <= cap.cpus && used.gpus + job.gpus <= cap.gpus && used.mem_mb + job.mem_mb <= cap.mem_mb;
}

bool SimCluster::ever_fits(const SimJob& job) const {
  const SimNode idle{0, 0, 0};
  return std::any_of(topology_.nodes.begin(), topology_.nodes.end(),
                     [&](const SimNode& cap) { return fits(job, idle, cap); });
}

void SimCluster::record(std::vector<SimEvent>& events, SimEvent ev) {
  trace_.push_back(ev);
  events.push_back(ev);
}

void SimCluster::schedule(std::vector<SimEvent>& events) {
  for (auto it = queue_.begin(); it != queue_.end();) {
    const auto& job = jobs_.at(it->job_id);
    if (job.unschedulable) {
      ++it;
      continue;
    }
    int chosen = -1;
    for (std::size_t n = 0; n < topology_.nodes.size(); ++n)
      if (fits(job, used_[n], topology_.nodes[n])) {
        chosen = static_cast<int>(n);
        break;
      }
    if (chosen < 0) break;  // the oldest schedulable unit waits; nothing overtakes it
    const Unit unit = *it;
    it = queue_.erase(it);
    start_unit(unit, chosen, events);
  }
}

void SimCluster::start_unit(const Unit& unit, int node, std::vector<SimEvent>& events) {
  auto& job = jobs_.at(unit.job_id);
  auto& task = job.tasks[static_cast<std::size_t>(unit.task)];
  auto& u = used_[static_cast<std::size_t>(node)];
  u.cpus += job.cpus;
  u.gpus += job.gpus;
  u.mem_mb += job.mem_mb;
  check_capacity();

  SimTime run = job.duration;
  if (job.forced_state == JobState::Timeout) run = job.time_limit.value_or(job.duration);
  else if (job.time_limit && job.duration > *job.time_limit) run = *job.time_limit;
  task.state = JobState::Running;
  task.node = node;
  task.start = clock_;
  task.end = clock_ + run;
  const std::optional<int> index = job.array ? std::optional<int>(job.array->first + unit.task) : std::nullopt;
  record(events, {clock_, job.id, index, JobState::Pending, JobState::Running});
  append_log(job, unit.task, "[t=" + seconds_text(clock_) + "s] started on node " + std::to_string(node));
}

void SimCluster::release(const SimJob& job, const SimTask& task) {
  auto& u = used_[static_cast<std::size_t>(task.node)];
  u.cpus -= job.cpus;
  u.gpus -= job.gpus;
  u.mem_mb -= job.mem_mb;
}

void SimCluster::finish_unit(const Unit& unit, std::vector<SimEvent>& events) {
  auto& job = jobs_.at(unit.job_id);
  auto& task = job.tasks[static_cast<std::size_t>(unit.task)];
  release(job, task);

  JobState final_state = JobState::Completed;
  if (job.forced_state == JobState::Timeout || (job.time_limit && job.duration > *job.time_limit))
    final_state = JobState::Timeout;
  else if (job.forced_state)
    final_state = *job.forced_state;

  if (final_state == JobState::Completed) {
    const bool is_conversion = env_of(job, "DATA_PATH") && env_of(job, "SRC_FORMAT") && env_of(job, "DST_FORMAT");
    if (is_conversion) {
      if (!convert_item(job, job.array ? job.array->first + unit.task : 0)) final_state = JobState::Failed;
    } else if (!job.array && env_of(job, "OUT_PATH")) {
      if (!dir_exists(normalize_remote_path(*env_of(job, "OUT_PATH")))) final_state = JobState::Failed;
      else if (!job.missing_output) produce_outputs(job);
    }
  }
  task.state = final_state;
  task.exit_code = final_state == JobState::Completed ? 0 : 1;
  task.end = clock_;
  const std::optional<int> index = job.array ? std::optional<int>(job.array->first + unit.task) : std::nullopt;
  record(events, {clock_, job.id, index, JobState::Running, final_state});
  append_log(job, unit.task,
             "[t=" + seconds_text(clock_) + "s] finished " + std::string(to_string(final_state)) +
                 " exit=" + std::to_string(task.exit_code));
}

void SimCluster::cancel_job(SimJob& job, std::vector<SimEvent>& events) {
  for (std::size_t t = 0; t < job.tasks.size(); ++t) {
    auto& task = job.tasks[t];
    if (is_terminal(task.state)) continue;
    const JobState before = task.state;
    if (before == JobState::Pending) {
      queue_.erase(std::remove(queue_.begin(), queue_.end(), Unit{job.id, static_cast<int>(t)}), queue_.end());
    } else {
      release(job, task);
      append_log(job, static_cast<int>(t), "[t=" + seconds_text(clock_) + "s] CANCELLED");
    }
    task.state = JobState::Cancelled;
    task.exit_code = 1;
    task.end = clock_;
    const std::optional<int> index = job.array ? std::optional<int>(job.array->first + static_cast<int>(t)) : std::nullopt;
    record(events, {clock_, job.id, index, before, JobState::Cancelled});
  }
}

void SimCluster::check_capacity() const {
  for (std::size_t n = 0; n < used_.size(); ++n) {
    const auto& u = used_[n];
    const auto& c = topology_.nodes[n];
    if (u.cpus > c.cpus || u.gpus > c.gpus || u.mem_mb > c.mem_mb || u.cpus < 0 || u.gpus < 0 || u.mem_mb < 0)
      throw std::logic_error("SimCluster: node " + std::to_string(n) + " over-committed");
  }
}

std::vector<SimEvent> SimCluster::advance(SimTime dt) {
  std::lock_guard lock(mutex_);
  std::vector<SimEvent> events;
  if (dt.count() <= 0) return events;
  const SimTime target = clock_ + dt;
  while (true) {
    schedule(events);
    std::optional<SimTime> next;
    for (const auto& [id, job] : jobs_)
      for (const auto& t : job.tasks)
        if (t.state == JobState::Running && (!next || *t.end < *next)) next = *t.end;
    if (!next || *next > target) break;
    clock_ = *next;
    std::vector<Unit> ending;
    for (const auto& [id, job] : jobs_)
      for (std::size_t t = 0; t < job.tasks.size(); ++t)
        if (job.tasks[t].state == JobState::Running && *job.tasks[t].end == clock_)
          ending.push_back({id, static_cast<int>(t)});
    for (const auto& unit : ending) finish_unit(unit, events);
  }
  clock_ = target;
  return events;
}

// --- faults -----------------------------------------------------------------------

void SimCluster::apply_faults(SimJob& job) {
  for (auto it = faults_.begin(); it != faults_.end();) {
    bool matched = false, consumed = false;
    switch (it->match) {
      case FaultDirective::Match::NextSubmission: matched = consumed = true; break;
      case FaultDirective::Match::JobId: matched = consumed = it->job_id == job.id; break;
      case FaultDirective::Match::ScriptPathContains:
        matched = job.script_path.find(it->pattern) != std::string::npos;
        break;
    }
    if (matched) {
      if (it->forced_state) job.forced_state = it->forced_state;
      job.missing_output |= it->missing_output;
    }
    it = consumed ? faults_.erase(it) : std::next(it);
  }
}

void SimCluster::inject_fault(FaultDirective directive) {
  std::lock_guard lock(mutex_);
  if (directive.forced_state && *directive.forced_state != JobState::Failed &&
      *directive.forced_state != JobState::Timeout && *directive.forced_state != JobState::Cancelled)
    throw std::invalid_argument("inject_fault: forced state must be FAILED, TIMEOUT or CANCELLED");
  if (directive.match == FaultDirective::Match::JobId) {
    auto it = jobs_.find(directive.job_id);
    if (it != jobs_.end()) {
      auto& job = it->second;
      const bool started = std::any_of(job.tasks.begin(), job.tasks.end(), [](const SimTask& t) { return t.state != JobState::Pending; });
      // A running task already has its end time; only the outcome changes.
      if (directive.forced_state == JobState::Timeout && started) return;
      if (directive.forced_state) job.forced_state = directive.forced_state;
      job.missing_output |= directive.missing_output;
      return;
    }
  }
  faults_.push_back(std::move(directive));
}

void SimCluster::inject_transport_failures(std::string command, int count) {
  std::lock_guard lock(mutex_);
  transport_failures_[std::move(command)] += count;
}

void SimCluster::corrupt_next_transfer() {
  std::lock_guard lock(mutex_);
  corrupt_next_ = true;
}

void SimCluster::set_read_only(std::string prefix) {
  std::lock_guard lock(mutex_);
  read_only_.push_back(normalize_remote_path(prefix));
}

void SimCluster::fail_pulls_matching(std::string pattern) {
  std::lock_guard lock(mutex_);
  failing_pulls_.push_back(std::move(pattern));
}

bool SimCluster::take_transport_failure(const std::string& command) {
  std::lock_guard lock(mutex_);
  auto it = transport_failures_.find(command);
  if (it == transport_failures_.end() || it->second <= 0) return false;
  --it->second;
  return true;
}

bool SimCluster::take_corruption() {
  std::lock_guard lock(mutex_);
  return std::exchange(corrupt_next_, false);
}

// --- job side effects ------------------------------------------------------------

std::optional<std::string> SimCluster::env_of(const SimJob& job, std::string_view name) const {
  for (const auto& [k, v] : job.env)
    if (k == name) return v;
  return std::nullopt;
}

std::string SimCluster::log_path(const SimJob& job, int task) const {
  std::string out;
  const auto& p = job.logfile_pattern;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] != '%' || i + 1 >= p.size()) {
      out.push_back(p[i]);
      continue;
    }
    const char c = p[++i];
    if (c == 'j' || c == 'A') out += std::to_string(job.id);
    else if (c == 'a') out += std::to_string(job.array ? job.array->first + task : 0);
    else if (c == '%') out.push_back('%');
    else out += std::string("%") + c;
  }
  return out;
}

void SimCluster::append_log(const SimJob& job, int task, const std::string& line) {
  const auto path = log_path(job, task);
  if (!writable(path) || !mkdirs(parent_of(path))) return;
  auto& content = files_[path];
  if (content.empty())
    content = "job " + std::to_string(job.id) + (job.array ? "_" + std::to_string(job.array->first + task) : "") +
              " script " + job.script_path + "\n";
  content += line + "\n";
}

void SimCluster::produce_outputs(SimJob& job) {
  const auto out_dir = normalize_remote_path(*env_of(job, "OUT_PATH"));
  std::vector<std::string> stems;
  if (auto in = env_of(job, "IN_PATH"); in && dir_exists(normalize_remote_path(*in))) {
    for (const auto& name : children(normalize_remote_path(*in))) {
      auto s = stem_of(name);
      if (std::find(stems.begin(), stems.end(), s) == stems.end()) stems.push_back(s);
    }
  }
  const int n = job.outputs.value_or(static_cast<int>(stems.size()));
  auto& manifest = outputs_[job.id];
  for (int k = 0; k < n; ++k) {
    const bool from_input = k < static_cast<int>(stems.size());
    const auto name = from_input ? stems[static_cast<std::size_t>(k)] + "_mask.tiff" : "output_" + std::to_string(k) + ".tiff";
    const auto content = "simulated mask " + name + " from job " + std::to_string(job.id) + "\n";
    const auto path = out_dir + "/" + name;
    if (put(path, content)) manifest[path] = content;
  }
  append_log(job, 0, "wrote " + std::to_string(manifest.size()) + " output files to " + out_dir);
}

bool SimCluster::convert_item(SimJob& job, int index) {
  const auto data = normalize_remote_path(*env_of(job, "DATA_PATH"));
  const auto src = "." + *env_of(job, "SRC_FORMAT");
  const auto dst = *env_of(job, "DST_FORMAT");
  std::vector<std::string> items;
  for (const auto& name : children(data))
    if (name.size() > src.size() && name.compare(name.size() - src.size(), src.size(), src) == 0) items.push_back(name);
  if (index < 0 || index >= static_cast<int>(items.size())) return false;
  const auto& item = items[static_cast<std::size_t>(index)];
  const auto item_path = data + "/" + item;
  std::string content = "converted " + item + "\n";
  if (file_exists(item_path)) content += sha256_hex(files_.at(item_path)) + "\n";
  for (const auto& [path, bytes] : files_)
    if (under(path, item_path) && path != item_path)
      content += path.substr(item_path.size() + 1) + " " + sha256_hex(bytes) + "\n";
  const auto target = data + "/" + item.substr(0, item.size() - src.size()) + "." + dst;
  if (!put(target, content)) return false;
  outputs_[job.id][target] = content;
  return true;
}

// --- filesystem --------------------------------------------------------------------

bool SimCluster::writable(const std::string& p) const {
  return std::none_of(read_only_.begin(), read_only_.end(), [&](const std::string& ro) { return under(p, ro); });
}

bool SimCluster::mkdirs(const std::string& p) {
  if (dir_exists(p)) return true;
  if (file_exists(p) || !writable(p)) return false;
  if (p != "/" && !mkdirs(parent_of(p))) return false;
  dirs_.insert(p);
  return true;
}

bool SimCluster::put(const std::string& p, std::string content) {
  if (!dir_exists(parent_of(p)) || dir_exists(p) || !writable(p)) return false;
  files_[p] = std::move(content);
  return true;
}

std::vector<std::string> SimCluster::children(const std::string& dir) const {
  const std::string prefix = dir == "/" ? "/" : dir + "/";
  std::set<std::string> names;
  const auto collect = [&](const std::string& path) {
    if (path.size() <= prefix.size() || path.compare(0, prefix.size(), prefix) != 0) return;
    const auto rest = path.substr(prefix.size());
    names.insert(rest.substr(0, rest.find('/')));
  };
  for (auto it = files_.lower_bound(prefix); it != files_.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it)
    collect(it->first);
  for (auto it = dirs_.lower_bound(prefix); it != dirs_.end() && it->compare(0, prefix.size(), prefix) == 0; ++it)
    collect(*it);
  return {names.begin(), names.end()};
}

void SimCluster::remove_path(const std::string& p) {
  std::erase_if(files_, [&](const auto& kv) { return under(kv.first, p); });
  std::erase_if(dirs_, [&](const std::string& d) { return under(d, p) && d != "/"; });
}

std::optional<std::string> SimCluster::read_file(const std::string& path) const {
  std::lock_guard lock(mutex_);
  auto it = files_.find(normalize_remote_path(path));
  if (it == files_.end()) return std::nullopt;
  return it->second;
}

bool SimCluster::write_file(const std::string& path, std::string content) {
  std::lock_guard lock(mutex_);
  return put(normalize_remote_path(path), std::move(content));
}

bool SimCluster::is_directory(const std::string& path) const {
  std::lock_guard lock(mutex_);
  return dir_exists(normalize_remote_path(path));
}

std::string SimCluster::tree_snapshot(const std::string& prefix) const {
  std::lock_guard lock(mutex_);
  const auto root = normalize_remote_path(prefix);
  std::map<std::string, std::string> lines;
  for (const auto& d : dirs_)
    if (under(d, root)) lines[d] = "d " + d;
  for (const auto& [path, data] : files_)
    if (under(path, root)) lines[path] = "f " + path + " " + sha256_hex(data);
  std::string out;
  for (const auto& [path, line] : lines) out += line + "\n";
  return out;
}

// --- queries -----------------------------------------------------------------------

SimTime SimCluster::now() const {
  std::lock_guard lock(mutex_);
  return clock_;
}

std::vector<SimEvent> SimCluster::trace() const {
  std::lock_guard lock(mutex_);
  return trace_;
}

std::optional<SimJob> SimCluster::job(std::int64_t id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<SimJob> SimCluster::jobs() const {
  std::lock_guard lock(mutex_);
  std::vector<SimJob> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

std::vector<SimDiagnostic> SimCluster::diagnostics() const {
  std::lock_guard lock(mutex_);
  std::vector<SimDiagnostic> out;
  for (const auto& [id, job] : jobs_)
    if (job.unschedulable && !is_terminal(job.state()))
      out.push_back({id, "requests cpus=" + std::to_string(job.cpus) + " gpus=" + std::to_string(job.gpus) +
                             " mem_mb=" + std::to_string(job.mem_mb) + ", more than any node provides; never schedulable"});
  return out;
}

std::vector<SimNode> SimCluster::node_usage() const {
  std::lock_guard lock(mutex_);
  return used_;
}

std::map<std::string, std::string> SimCluster::output_manifest(std::int64_t job_id) const {
  std::lock_guard lock(mutex_);
  auto it = outputs_.find(job_id);
  if (it == outputs_.end()) return {};
  return it->second;
}

// --- persistence -------------------------------------------------------------------

namespace {

json state_to_json(JobState s) { return std::string(to_string(s)); }

JobState state_from_json(const json& j) {
  auto s = parse_job_state(j.get<std::string>());
  if (!s) throw std::runtime_error("simulator state: bad job state");
  return *s;
}

json env_to_json(const EnvList& env) {
  json out = json::array();
  for (const auto& [k, v] : env) out.push_back({k, v});
  return out;
}

EnvList env_from_json(const json& j) {
  EnvList env;
  for (const auto& kv : j) env.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
  return env;
}

}  // namespace

json SimCluster::to_json() const {
  std::lock_guard lock(mutex_);
  json j;
  json nodes = json::array();
  for (const auto& n : topology_.nodes) nodes.push_back({{"cpus", n.cpus}, {"gpus", n.gpus}, {"mem_mb", n.mem_mb}});
  j["topology"] = {{"nodes", nodes},
                   {"default_duration_s", topology_.default_duration.count()},
                   {"partitions", topology_.partitions}};
  j["clock_ms"] = clock_.count();
  j["next_job_id"] = next_job_id_;
  json jobs = json::array();
  for (const auto& [id, job] : jobs_) {
    json jj{{"id", job.id},
            {"cpus", job.cpus},
            {"gpus", job.gpus},
            {"mem_mb", job.mem_mb},
            {"duration_ms", job.duration.count()},
            {"script_path", job.script_path},
            {"script_text", job.script_text},
            {"logfile_pattern", job.logfile_pattern},
            {"env", env_to_json(job.env)},
            {"submitted_ms", job.submitted.count()},
            {"missing_output", job.missing_output},
            {"unschedulable", job.unschedulable}};
    if (job.array) jj["array"] = {job.array->first, job.array->second};
    if (job.time_limit) jj["time_limit_ms"] = job.time_limit->count();
    if (job.outputs) jj["outputs"] = *job.outputs;
    if (job.forced_state) jj["forced_state"] = state_to_json(*job.forced_state);
    json tasks = json::array();
    for (const auto& t : job.tasks) {
      json jt{{"state", state_to_json(t.state)}, {"node", t.node}, {"exit_code", t.exit_code}};
      if (t.start) jt["start_ms"] = t.start->count();
      if (t.end) jt["end_ms"] = t.end->count();
      tasks.push_back(std::move(jt));
    }
    jj["tasks"] = std::move(tasks);
    jobs.push_back(std::move(jj));
  }
  j["jobs"] = std::move(jobs);
  json queue = json::array();
  for (const auto& u : queue_) queue.push_back({u.job_id, u.task});
  j["queue"] = std::move(queue);
  json used = json::array();
  for (const auto& u : used_) used.push_back({u.cpus, u.gpus, u.mem_mb});
  j["used"] = std::move(used);
  json trace = json::array();
  for (const auto& e : trace_) {
    json je{{"t", e.time.count()}, {"job", e.job_id}, {"from", state_to_json(e.from)}, {"to", state_to_json(e.to)}};
    if (e.task) je["task"] = *e.task;
    trace.push_back(std::move(je));
  }
  j["trace"] = std::move(trace);
  json files = json::object();
  for (const auto& [p, d] : files_) files[p] = base64_encode(d);
  j["files"] = std::move(files);
  j["dirs"] = dirs_;
  json faults = json::array();
  for (const auto& f : faults_) {
    json jf{{"match", static_cast<int>(f.match)}, {"job_id", f.job_id}, {"pattern", f.pattern},
            {"missing_output", f.missing_output}};
    if (f.forced_state) jf["forced_state"] = state_to_json(*f.forced_state);
    faults.push_back(std::move(jf));
  }
  j["faults"] = std::move(faults);
  j["read_only"] = read_only_;
  j["failing_pulls"] = failing_pulls_;
  json outputs = json::object();
  for (const auto& [id, manifest] : outputs_) {
    json m = json::object();
    for (const auto& [p, d] : manifest) m[p] = base64_encode(d);
    outputs[std::to_string(id)] = std::move(m);
  }
  j["outputs"] = std::move(outputs);
  return j;
}

std::unique_ptr<SimCluster> SimCluster::from_json(const json& j) {
  SimTopology topo;
  topo.nodes.clear();
  for (const auto& n : j.at("topology").at("nodes"))
    topo.nodes.push_back({n.at("cpus").get<int>(), n.at("gpus").get<int>(), n.at("mem_mb").get<int>()});
  topo.default_duration = std::chrono::seconds(j.at("topology").at("default_duration_s").get<std::int64_t>());
  topo.partitions = j.at("topology").at("partitions").get<std::vector<std::string>>();
  auto c = std::make_unique<SimCluster>(std::move(topo));
  c->clock_ = SimTime(j.at("clock_ms").get<std::int64_t>());
  c->next_job_id_ = j.at("next_job_id").get<std::int64_t>();
  for (const auto& jj : j.at("jobs")) {
    SimJob job;
    job.id = jj.at("id").get<std::int64_t>();
    job.cpus = jj.at("cpus").get<int>();
    job.gpus = jj.at("gpus").get<int>();
    job.mem_mb = jj.at("mem_mb").get<int>();
    job.duration = SimTime(jj.at("duration_ms").get<std::int64_t>());
    job.script_path = jj.at("script_path").get<std::string>();
    job.script_text = jj.at("script_text").get<std::string>();
    job.logfile_pattern = jj.at("logfile_pattern").get<std::string>();
    job.env = env_from_json(jj.at("env"));
    job.submitted = SimTime(jj.at("submitted_ms").get<std::int64_t>());
    job.missing_output = jj.at("missing_output").get<bool>();
    job.unschedulable = jj.at("unschedulable").get<bool>();
    if (jj.contains("array")) job.array = std::make_pair(jj["array"][0].get<int>(), jj["array"][1].get<int>());
    if (jj.contains("time_limit_ms")) job.time_limit = SimTime(jj["time_limit_ms"].get<std::int64_t>());
    if (jj.contains("outputs")) job.outputs = jj["outputs"].get<int>();
    if (jj.contains("forced_state")) job.forced_state = state_from_json(jj["forced_state"]);
    for (const auto& jt : jj.at("tasks")) {
      SimTask t;
      t.state = state_from_json(jt.at("state"));
      t.node = jt.at("node").get<int>();
      t.exit_code = jt.at("exit_code").get<int>();
      if (jt.contains("start_ms")) t.start = SimTime(jt["start_ms"].get<std::int64_t>());
      if (jt.contains("end_ms")) t.end = SimTime(jt["end_ms"].get<std::int64_t>());
      job.tasks.push_back(t);
    }
    c->jobs_.emplace(job.id, std::move(job));
  }
  for (const auto& u : j.at("queue")) c->queue_.push_back({u.at(0).get<std::int64_t>(), u.at(1).get<int>()});
  c->used_.clear();
  for (const auto& u : j.at("used")) c->used_.push_back({u.at(0).get<int>(), u.at(1).get<int>(), u.at(2).get<int>()});
  for (const auto& je : j.at("trace")) {
    SimEvent e{SimTime(je.at("t").get<std::int64_t>()), je.at("job").get<std::int64_t>(), std::nullopt,
               state_from_json(je.at("from")), state_from_json(je.at("to"))};
    if (je.contains("task")) e.task = je["task"].get<int>();
    c->trace_.push_back(e);
  }
  for (const auto& [p, d] : j.at("files").items()) c->files_[p] = base64_decode(d.get<std::string>());
  c->dirs_ = j.at("dirs").get<std::set<std::string>>();
  for (const auto& jf : j.at("faults")) {
    FaultDirective f;
    f.match = static_cast<FaultDirective::Match>(jf.at("match").get<int>());
    f.job_id = jf.at("job_id").get<std::int64_t>();
    f.pattern = jf.at("pattern").get<std::string>();
    f.missing_output = jf.at("missing_output").get<bool>();
    if (jf.contains("forced_state")) f.forced_state = state_from_json(jf["forced_state"]);
    c->faults_.push_back(std::move(f));
  }
  c->read_only_ = j.at("read_only").get<std::vector<std::string>>();
  c->failing_pulls_ = j.at("failing_pulls").get<std::vector<std::string>>();
  for (const auto& [id, manifest] : j.at("outputs").items())
    for (const auto& [p, d] : manifest.items()) c->outputs_[std::stoll(id)][p] = base64_decode(d.get<std::string>());
  return c;
}

// --- endpoint ------------------------------------------------------------------------

ExecResult SimEndpoint::exec(const std::vector<std::string>& argv, const ExecOptions& options) {
  if (!argv.empty() && cluster_->take_transport_failure(argv.front()))
    throw Error(Errc::ConnectionLost, "simulator", "injected transport failure during " + argv.front());
  auto result = cluster_->exec(argv, options);
  if (result.duration_ms > options.deadline.count())
    throw Error(Errc::Timeout, argv.front(), "deadline of " + std::to_string(options.deadline.count()) + " ms exceeded");
  return result;
}

void SimEndpoint::upload(const std::filesystem::path& local, const std::string& remote) {
  std::ifstream in(local, std::ios::binary);
  if (!in) throw Error(Errc::SourceMissing, local.string(), "cannot read");
  std::ostringstream buf;
  buf << in.rdbuf();
  auto data = std::move(buf).str();
  if (cluster_->take_corruption()) {
    if (data.empty()) data.push_back('\0');
    else data[0] = static_cast<char>(data[0] ^ 0x5A);
  }
  if (!cluster_->write_file(remote, std::move(data)))
    throw Error(Errc::DestinationUnwritable, remote, "directory missing or read-only");
}

void SimEndpoint::download(const std::string& remote, const std::filesystem::path& local) {
  auto data = cluster_->read_file(remote);
  if (!data) throw Error(Errc::SourceMissing, remote, "no such remote file");
  if (cluster_->take_corruption()) {
    if (data->empty()) data->push_back('\0');
    else (*data)[0] = static_cast<char>((*data)[0] ^ 0x5A);
  }
  std::ofstream out(local, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::DestinationUnwritable, local.string(), "cannot write");
  out.write(data->data(), static_cast<std::streamsize>(data->size()));
  if (!out) throw Error(Errc::DestinationUnwritable, local.string(), "write failed");
}

}  // namespace slurmbridge
