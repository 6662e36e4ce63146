#include <fstream>
#include <random>

#include "slurmbridge/orchestrator.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<std::pair<RunStage, std::string_view>, 8> kStageNames{{
    {RunStage::Preparing, "Preparing"},
    {RunStage::Transferring, "Transferring"},
    {RunStage::Queued, "Queued"},
    {RunStage::Running, "Running"},
    {RunStage::Retrieving, "Retrieving"},
    {RunStage::Done, "Done"},
    {RunStage::Failed, "Failed"},
    {RunStage::PartialFailure, "PartialFailure"},
}};

std::string one_line(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

json value_to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

ParamValue value_from_json(const json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number()) return j.get<double>();
  return j.get<std::string>();
}

json handle_to_json(const JobHandle& h) {
  return {{"job_id", h.job_id},           {"kind", std::string(to_string(h.kind))},
          {"script_path", h.script_path}, {"logfile_path", h.logfile_path},
          {"submitted_at", h.submitted_at}, {"array_size", h.array_size}};
}

JobHandle handle_from_json(const json& j) {
  JobHandle h;
  h.job_id = j.at("job_id").get<std::int64_t>();
  h.kind = j.at("kind").get<std::string>() == "workflow" ? JobKind::Workflow : JobKind::ConversionArray;
  h.script_path = j.at("script_path").get<std::string>();
  h.logfile_path = j.at("logfile_path").get<std::string>();
  h.submitted_at = j.at("submitted_at").get<std::string>();
  h.array_size = j.at("array_size").get<int>();
  return h;
}

std::vector<std::string> paths_to_strings(const std::vector<fs::path>& v) {
  std::vector<std::string> out;
  for (const auto& p : v) out.push_back(p.string());
  return out;
}

std::vector<fs::path> paths_from_json(const json& j) {
  std::vector<fs::path> out;
  for (const auto& s : j) out.emplace_back(s.get<std::string>());
  return out;
}

}  // namespace

std::string_view to_string(RunStage s) noexcept {
  for (const auto& [stage, name] : kStageNames)
    if (stage == s) return name;
  return "?";
}

std::optional<RunStage> parse_run_stage(std::string_view s) noexcept {
  for (const auto& [stage, name] : kStageNames)
    if (name == s) return stage;
  return std::nullopt;
}

std::string generate_run_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_int_distribution<std::uint64_t> dist;
  std::uint64_t hi = dist(rng), lo = dist(rng);
  hi = (hi & ~0xF000ULL) | 0x4000ULL;                       // version 4
  lo = (lo & ~(0xC000ULL << 48)) | (0x8000ULL << 48);        // RFC 4122 variant
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08llx-%04llx-%04llx-%04llx-%012llx",
                static_cast<unsigned long long>(hi >> 32), static_cast<unsigned long long>((hi >> 16) & 0xFFFF),
                static_cast<unsigned long long>(hi & 0xFFFF), static_cast<unsigned long long>(lo >> 48),
                static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
  return buf;
}

// --- record serialization --------------------------------------------------------

json to_json(const RunRecord& r) {
  json values = json::object();
  for (const auto& [k, v] : r.values) values[k] = value_to_json(v);
  json inputs = json::object();
  for (const auto& [id, p] : r.inputs) inputs[id] = p.string();
  json batches = json::array();
  for (const auto& b : r.batches) {
    json jb{{"index", b.index}, {"items", b.items}, {"remote_dir", b.remote_dir},
            {"error_detail", b.error_detail}, {"logs", paths_to_strings(b.logs)}};
    jb["conversion_handle"] = b.conversion_handle ? handle_to_json(*b.conversion_handle) : json(nullptr);
    jb["workflow_handle"] = b.workflow_handle ? handle_to_json(*b.workflow_handle) : json(nullptr);
    jb["state"] = b.state ? json(std::string(to_string(*b.state))) : json(nullptr);
    jb["error"] = b.error ? json(std::string(to_string(*b.error))) : json(nullptr);
    jb["results_zip"] = b.results_zip ? json(b.results_zip->string()) : json(nullptr);
    batches.push_back(std::move(jb));
  }
  json stages = json::array();
  for (const auto& s : r.stages) stages.push_back({{"stage", std::string(to_string(s.stage))}, {"at", s.at}, {"detail", s.detail}});
  return {{"run_id", r.run_id},
          {"workflow", r.workflow},
          {"version", r.version},
          {"values", values},
          {"batch_size", r.batch_size},
          {"inputs", inputs},
          {"batches", batches},
          {"overall_state", std::string(to_string(r.overall_state))},
          {"stages", stages},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at},
          {"output_artifacts", paths_to_strings(r.output_artifacts)}};
}

RunRecord run_record_from_json(const json& j) {
  const auto stage_of = [](const json& s) {
    auto st = parse_run_stage(s.get<std::string>());
    if (!st) throw Error(Errc::MalformedDocument, "overall_state", "unknown stage");
    return *st;
  };
  const auto errc_of = [](const std::string& name) {
    for (int i = 0; i <= static_cast<int>(Errc::CorruptArchive); ++i)
      if (to_string(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
    throw Error(Errc::MalformedDocument, "error", "unknown error code " + name);
  };
  try {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.workflow = j.at("workflow").get<std::string>();
    r.version = j.at("version").get<std::string>();
    for (const auto& [k, v] : j.at("values").items()) r.values[k] = value_from_json(v);
    r.batch_size = j.at("batch_size").get<std::size_t>();
    for (const auto& [id, p] : j.at("inputs").items()) r.inputs[id] = p.get<std::string>();
    for (const auto& jb : j.at("batches")) {
      BatchRun b;
      b.index = jb.at("index").get<int>();
      b.items = jb.at("items").get<std::vector<std::string>>();
      b.remote_dir = jb.at("remote_dir").get<std::string>();
      b.error_detail = jb.at("error_detail").get<std::string>();
      b.logs = paths_from_json(jb.at("logs"));
      if (!jb.at("conversion_handle").is_null()) b.conversion_handle = handle_from_json(jb["conversion_handle"]);
      if (!jb.at("workflow_handle").is_null()) b.workflow_handle = handle_from_json(jb["workflow_handle"]);
      if (!jb.at("state").is_null()) b.state = parse_job_state(jb["state"].get<std::string>());
      if (!jb.at("error").is_null()) b.error = errc_of(jb["error"].get<std::string>());
      if (!jb.at("results_zip").is_null()) b.results_zip = jb["results_zip"].get<std::string>();
      r.batches.push_back(std::move(b));
    }
    r.overall_state = stage_of(j.at("overall_state"));
    for (const auto& s : j.at("stages"))
      r.stages.push_back({stage_of(s.at("stage")), s.at("at").get<std::string>(), s.at("detail").get<std::string>()});
    r.started_at = j.at("started_at").get<std::string>();
    r.finished_at = j.at("finished_at").get<std::string>();
    r.output_artifacts = paths_from_json(j.at("output_artifacts"));
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedDocument, "run record", e.what());
  }
}

// --- journal -----------------------------------------------------------------------

fs::path journal_path(const fs::path& dir, const std::string& run_id) { return dir / (run_id + ".journal"); }
fs::path record_path(const fs::path& dir, const std::string& run_id) { return dir / (run_id + ".record.json"); }

Journal::Journal(fs::path dir, std::string run_id) {
  fs::create_directories(dir);
  path_ = journal_path(dir, run_id);
}

void Journal::append(std::string_view kind, std::string_view detail) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  out << iso8601_now() << '\t' << one_line(kind) << '\t' << one_line(detail) << '\n';
}

std::vector<Journal::Line> Journal::read(const fs::path& dir, const std::string& run_id) {
  std::ifstream in(journal_path(dir, run_id));
  if (!in) throw Error(Errc::UnknownRunId, run_id, "no journal in " + dir.string());
  std::vector<Line> lines;
  for (std::string line; std::getline(in, line);) {
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos) continue;
    lines.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)});
  }
  return lines;
}

void save_record(const fs::path& dir, const RunRecord& record) {
  fs::create_directories(dir);
  const auto target = record_path(dir, record.run_id);
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json(record).dump(2) << '\n';
  }
  fs::rename(tmp, target);
}

RunRecord load_record(const fs::path& dir, const std::string& run_id) {
  std::ifstream in(record_path(dir, run_id));
  if (!in) throw Error(Errc::UnknownRunId, run_id, "no run record in " + dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedDocument, run_id, e.what());
  }
  return run_record_from_json(j);
}

}  // namespace slurmbridge
