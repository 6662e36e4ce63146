#include "slurmbridge/slurm_client.hpp"

#include <algorithm>
#include <charconv>
#include <ctime>
#include <fstream>
#include <iterator>
#include <regex>
#include <set>

#include "slurmbridge/digest.hpp"
#include "slurmbridge/error.hpp"
#include "slurmbridge/jobscript.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;

namespace {

constexpr std::chrono::milliseconds kPullDeadline{3'600'000};
constexpr int kMaxConsecutivePollFailures = 3;

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = text.find(from, pos)) != std::string::npos; pos += to.size())
    text.replace(pos, from.size(), to);
  return text;
}

std::string basename_of(const std::string& p) {
  const auto slash = p.find_last_of('/');
  return slash == std::string::npos ? p : p.substr(slash + 1);
}

std::string parent_of(const std::string& p) {
  const auto slash = p.find_last_of('/');
  if (slash == std::string::npos) return ".";
  return slash == 0 ? "/" : p.substr(0, slash);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// True when `remote` already holds exactly `content`.
bool remote_matches(Endpoint& ep, const std::string& remote, std::string_view content) {
  if (!ep.path_exists(remote)) return false;
  return ep.remote_checksum(remote) == sha256_hex(content);
}

void pull_image(Endpoint& ep, const std::string& label, const std::string& image_file, const std::string& reference,
                EnvReport& report) {
  if (ep.path_exists(image_file)) return;
  const auto r = ep.exec({"singularity", "pull", image_file, "docker://" + reference}, {std::nullopt, {}, kPullDeadline});
  if (!r.ok())
    throw Error(Errc::PullFailed, label, "exit " + std::to_string(r.exit_code) + ": " + trim(r.stderr_text));
  report.pulled_images.emplace_back(label, image_file);
}

}  // namespace

std::string images_dir(std::string_view scratch) { return std::string(scratch) + "/singularity_images"; }
std::string job_scripts_dir(std::string_view scratch) { return std::string(scratch) + "/slurm-scripts/jobs"; }
std::string data_dir(std::string_view scratch) { return std::string(scratch) + "/data"; }
std::string logs_dir(std::string_view scratch) { return std::string(scratch) + "/logs"; }

std::string placed_script_path(std::string_view scratch, std::string_view name) {
  return job_scripts_dir(scratch) + "/" + std::string(name) + ".sh";
}

std::string_view to_string(JobKind kind) noexcept {
  return kind == JobKind::Workflow ? "workflow" : "conversion";
}

std::string iso8601_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

EnvReport init_environment(Endpoint& ep, const ClusterProfile& profile, const WorkflowRegistry& registry) {
  EnvReport report;
  const auto& scratch = profile.scratch_dir;
  const std::vector<std::string> layout{images_dir(scratch), job_scripts_dir(scratch), data_dir(scratch),
                                        logs_dir(scratch)};
  for (const auto& dir : layout) {
    if (ep.path_exists(dir)) continue;
    const auto r = ep.exec({"mkdir", "-p", dir});
    if (!r.ok()) throw Error(Errc::ScratchUnwritable, dir, trim(r.stderr_text));
    report.created_dirs.push_back(dir);
  }
  report.refreshed = report.created_dirs.empty();

  // converters only matter for formats some workflow reads
  std::set<std::string> wanted;
  for (const auto& [name, entry] : registry.entries) wanted.insert(entry.input_format);
  for (const auto& [formats, reference] : profile.converters) {
    if (!wanted.count(formats.second)) continue;
    const auto label = formats.first + "_to_" + formats.second;
    try {
      pull_image(ep, label, converter_image_file(scratch, formats, reference), reference, report);
    } catch (const Error& e) {
      report.failures.emplace_back(label, e.what());
    }
  }

  for (const auto& [name, entry] : registry.entries) {
    try {
      const auto resolved = resolve_workflow(registry, name);
      const auto image_file = workflow_image_file(scratch, name, resolved.version);
      pull_image(ep, name, image_file, resolved.image_reference, report);

      std::string script_text;
      if (entry.job_script_source == JobScriptSource::RepoProvided) {
        std::ifstream in(*entry.job_script, std::ios::binary);
        if (!in) throw Error(Errc::SourceMissing, entry.job_script->string(), "job script not readable");
        script_text.assign(std::istreambuf_iterator<char>(in), {});
      } else {
        script_text = render_script(
            generate_launcher_script(name, effective_resources(registry, name), image_file, profile));
      }
      const auto script_path = placed_script_path(scratch, name);
      if (!remote_matches(ep, script_path, script_text)) {
        ep.put_text(script_text, script_path);
        report.placed_scripts.push_back(script_path);
      }
      report.images[name] = image_file;
      report.scripts[name] = script_path;
    } catch (const Error& e) {
      report.failures.emplace_back(name, e.what());
    }
  }
  return report;
}

JobHandle submit_job(Endpoint& ep, std::string_view script_text, const std::string& remote_script_path,
                     const EnvList& env, JobKind kind) {
  ep.put_text(script_text, remote_script_path);
  const auto r = ep.exec({"sbatch", remote_script_path}, {std::nullopt, env, kDefaultDeadline});
  if (!r.ok())
    throw Error(Errc::SubmitRejected, remote_script_path,
                "exit " + std::to_string(r.exit_code) + ": " + trim(r.stderr_text + r.stdout_text));
  static const std::regex submitted(R"(Submitted batch job (\d+))");
  std::smatch m;
  if (!std::regex_search(r.stdout_text, m, submitted))
    throw Error(Errc::UnparseableJobId, remote_script_path, "unexpected submitter output: " + trim(r.stdout_text));

  JobHandle h;
  h.job_id = std::stoll(m[1]);
  h.kind = kind;
  h.script_path = remote_script_path;
  h.submitted_at = iso8601_now();
  for (const auto& d : scan_directives(script_text)) {
    if (d.key == "--output" || d.key == "-o") h.logfile_path = d.value;
    if (d.key == "--array" || d.key == "-a") {
      const auto spec = d.value.substr(0, d.value.find('%'));
      const auto dash = spec.find('-');
      const int lo = std::stoi(spec.substr(0, dash));
      const int hi = dash == std::string::npos ? lo : std::stoi(spec.substr(dash + 1));
      h.array_size = hi - lo + 1;
    }
  }
  if (h.logfile_path.empty()) h.logfile_path = parent_of(remote_script_path) + "/slurm-%j.out";
  return h;
}

std::map<std::int64_t, JobState> poll_jobs(Endpoint& ep, const std::vector<JobHandle>& handles) {
  std::map<std::int64_t, JobState> out;
  if (handles.empty()) return out;
  std::string ids;
  for (const auto& h : handles) ids += (ids.empty() ? "" : ",") + std::to_string(h.job_id);

  ExecResult r;
  try {
    r = ep.exec({"sacct", "-n", "-P", "-X", "-o", "JobID,State", "-j", ids});
  } catch (const Error& e) {
    throw Error(Errc::AccountingUnavailable, ids, e.what());
  }
  if (!r.ok()) throw Error(Errc::AccountingUnavailable, ids, "sacct exit " + std::to_string(r.exit_code) + ": " + trim(r.stderr_text));

  std::map<std::int64_t, JobState> parents;
  std::map<std::int64_t, std::vector<JobState>> tasks;
  std::size_t pos = 0;
  const auto& text = r.stdout_text;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const auto line = trim(std::string_view(text).substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) continue;
    const auto bar = line.find('|');
    if (bar == std::string::npos) throw Error(Errc::UnknownState, line, "unparseable accounting line");
    const auto id_token = line.substr(0, bar);
    auto state_token = trim(std::string_view(line).substr(bar + 1));
    if (auto second = state_token.find('|'); second != std::string::npos) state_token.resize(second);
    if (id_token.find('.') != std::string::npos) continue;  // job steps
    const auto state = parse_job_state(state_token);
    if (!state) throw Error(Errc::UnknownState, state_token, "unmapped scheduler state for job " + id_token);

    const auto underscore = id_token.find('_');
    std::int64_t id = 0;
    const auto id_part = id_token.substr(0, underscore);
    auto [p, ec] = std::from_chars(id_part.data(), id_part.data() + id_part.size(), id);
    if (ec != std::errc{} || p != id_part.data() + id_part.size()) continue;
    if (underscore == std::string::npos) {
      parents[id] = *state;
      continue;
    }
    // "<id>_<task>" or a pending range "<id>_[lo-hi]"
    const auto task_part = id_token.substr(underscore + 1);
    int count = 1;
    if (!task_part.empty() && task_part.front() == '[') {
      static const std::regex range(R"(\[(\d+)-(\d+)(?:%\d+)?\])");
      std::smatch m;
      if (std::regex_match(task_part, m, range)) count = std::stoi(m[2]) - std::stoi(m[1]) + 1;
    }
    tasks[id].insert(tasks[id].end(), static_cast<std::size_t>(std::max(count, 1)), *state);
  }

  for (const auto& h : handles) {
    if (auto t = tasks.find(h.job_id); t != tasks.end()) {
      auto states = t->second;
      if (static_cast<int>(states.size()) < h.array_size)
        states.resize(static_cast<std::size_t>(h.array_size), JobState::Pending);
      out[h.job_id] = aggregate_array_state(states);
    } else if (auto p = parents.find(h.job_id); p != parents.end()) {
      out[h.job_id] = p->second;
    } else {
      out[h.job_id] = JobState::Pending;
    }
  }
  return out;
}

WaitResult wait_terminal(Endpoint& ep, Clock& clock, const std::vector<JobHandle>& handles,
                         std::chrono::milliseconds interval, std::chrono::milliseconds deadline,
                         const std::function<void(const std::map<std::int64_t, JobState>&)>& on_poll) {
  if (interval.count() <= 0 || deadline.count() < 0)
    throw Error(Errc::InvalidValue, "poll_interval", "intervals must be positive");
  WaitResult result;
  for (const auto& h : handles) result.states[h.job_id] = JobState::Pending;
  if (handles.empty()) return result;

  const auto start = clock.now();
  int failures = 0;
  while (true) {
    try {
      result.states = poll_jobs(ep, handles);
      ++result.polls;
      failures = 0;
      if (on_poll) on_poll(result.states);
      if (std::all_of(result.states.begin(), result.states.end(), [](const auto& kv) { return is_terminal(kv.second); }))
        return result;
    } catch (const Error& e) {
      if (e.code() != Errc::AccountingUnavailable || ++failures >= kMaxConsecutivePollFailures) throw;
    }
    const auto elapsed = clock.now() - start;
    if (elapsed >= deadline) {
      result.deadline_exceeded = true;
      return result;
    }
    clock.sleep_for(std::min(interval, std::chrono::duration_cast<std::chrono::milliseconds>(deadline - elapsed)));
  }
}

void cancel_job(Endpoint& ep, const JobHandle& handle) {
  // scancel on a finished job exits nonzero on some versions; that is still success here.
  ep.exec({"scancel", std::to_string(handle.job_id)});
}

std::vector<std::string> logfile_candidates(const JobHandle& handle) {
  const auto id = std::to_string(handle.job_id);
  auto base = replace_all(handle.logfile_path, "%j", id);
  base = replace_all(std::move(base), "%A", id);
  std::vector<std::string> out;
  if (base.find("%a") == std::string::npos) {
    out.push_back(base);
    return out;
  }
  out.push_back(replace_all(replace_all(base, "_%a", ""), "%a", ""));
  for (int t = 0; t < handle.array_size; ++t) out.push_back(replace_all(base, "%a", std::to_string(t)));
  return out;
}

std::vector<fs::path> fetch_logfile(Endpoint& ep, const JobHandle& handle, const fs::path& local_dir) {
  std::vector<fs::path> fetched;
  std::set<std::string> seen;
  for (const auto& remote : logfile_candidates(handle)) {
    if (!seen.insert(remote).second || !ep.path_exists(remote)) continue;
    const auto local = local_dir / basename_of(remote);
    ep.get_file(remote, local);
    fetched.push_back(local);
  }
  if (fetched.empty())
    throw Error(Errc::LogMissing, std::to_string(handle.job_id), "no log file at " + handle.logfile_path);
  return fetched;
}

fs::path fetch_results(Endpoint& ep, const std::string& out_dir, const fs::path& local_dir,
                       const std::string& archive_name) {
  if (!ep.path_exists(out_dir)) throw Error(Errc::SourceMissing, out_dir, "output directory missing");
  const auto archive = parent_of(out_dir) + "/" + archive_name;
  const auto r = ep.exec({"zip", "-q", "-r", "-D", archive, "."}, {out_dir, {}, kDefaultDeadline});
  if (r.exit_code == 12) throw Error(Errc::EmptyOutput, out_dir, "no output files");
  if (!r.ok())
    throw Error(Errc::RetrievalFailed, out_dir, "zip exit " + std::to_string(r.exit_code) + ": " + trim(r.stderr_text));
  const auto local = local_dir / archive_name;
  try {
    ep.get_file(archive, local);
  } catch (...) {
    ep.remove_tree(archive);
    throw;
  }
  ep.remove_tree(archive);
  return local;
}

std::vector<std::string> cleanup_run(Endpoint& ep, const std::vector<std::string>& remote_paths) {
  std::vector<std::string> removed;
  for (const auto& p : remote_paths) {
    if (!ep.path_exists(p)) continue;
    const auto r = ep.exec({"rm", "-rf", p});
    if (r.ok()) removed.push_back(p);
  }
  return removed;
}

}  // namespace slurmbridge
