#include "slurmbridge/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "slurmbridge/config.hpp"
#include "slurmbridge/descriptor.hpp"
#include "slurmbridge/error.hpp"
#include "slurmbridge/orchestrator.hpp"
#include "slurmbridge/sim_cluster.hpp"
#include "slurmbridge/slurm_client.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigEnv = "SLURMBRIDGE_CONFIG";
constexpr const char* kSimStateFile = "sim-cluster.json";

bool is_usage_error(Errc c) {
  switch (c) {
    case Errc::MalformedDocument:
    case Errc::UnsupportedSchema:
    case Errc::InvalidDescriptor:
    case Errc::MissingRequiredParam:
    case Errc::TypeMismatch:
    case Errc::UnknownParam:
    case Errc::MalformedConfig:
    case Errc::MissingSection:
    case Errc::InvalidValue:
    case Errc::UnknownWorkflow:
    case Errc::MissingInput:
    case Errc::DuplicateId:
    case Errc::InvalidBatchSize:
    case Errc::UnknownRunId:
      return true;
    default:
      return false;
  }
}

struct Globals {
  std::string config_path;
  std::string state_dir = ".slurmbridge";
  bool simulate = false;
  std::string topology_path;
};

// Endpoint + clock for one invocation; persists simulator state on save().
class Backend {
 public:
  Backend(const Globals& g, const ClusterConfig& cfg) : globals_(g) {
    if (g.simulate) {
      const auto state = fs::path(g.state_dir) / kSimStateFile;
      if (fs::exists(state)) {
        std::ifstream in(state);
        sim_ = std::shared_ptr<SimCluster>(SimCluster::from_json(nlohmann::json::parse(in)));
      } else {
        SimTopology topo;
        if (!g.topology_path.empty()) {
          std::ifstream in(g.topology_path);
          if (!in) throw Error(Errc::MalformedConfig, g.topology_path, "cannot read topology file");
          std::ostringstream buf;
          buf << in.rdbuf();
          topo = SimTopology::parse(buf.str());
        }
        sim_ = std::make_shared<SimCluster>(std::move(topo));
      }
      clock_ = std::make_unique<SimClock>(sim_);
      pool_ = std::make_unique<EndpointPool>([sim = sim_] { return std::make_unique<SimEndpoint>(sim); });
    } else {
      clock_ = std::make_unique<SystemClock>();
      pool_ = std::make_unique<EndpointPool>([profile = cfg.profile] { return std::make_unique<SshEndpoint>(profile); });
    }
  }

  EndpointPool& pool() { return *pool_; }
  Clock& clock() { return *clock_; }

  void save() const {
    if (!sim_) return;
    fs::create_directories(globals_.state_dir);
    const auto target = fs::path(globals_.state_dir) / kSimStateFile;
    auto tmp = target;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << sim_->to_json().dump() << '\n';
    }
    fs::rename(tmp, target);
  }

 private:
  const Globals& globals_;
  std::shared_ptr<SimCluster> sim_;
  std::unique_ptr<Clock> clock_;
  std::unique_ptr<EndpointPool> pool_;
};

fs::path runs_dir(const Globals& g) { return fs::path(g.state_dir) / "runs"; }
fs::path results_dir(const Globals& g, const std::string& run_id) { return fs::path(g.state_dir) / "results" / run_id; }

std::string value_text(const std::optional<ParamValue>& v) { return v ? render_value(*v) : "-"; }

void print_record(std::ostream& out, const RunRecord& r) {
  out << "run_id=" << r.run_id << '\n'
      << "workflow=" << r.workflow << '\n'
      << "version=" << r.version << '\n'
      << "state=" << to_string(r.overall_state) << '\n'
      << "batches=" << r.batches.size() << '\n';
  for (const auto& b : r.batches) {
    out << "batch" << b.index << "=" << (b.state ? to_string(*b.state) : std::string_view("NOT_SUBMITTED"));
    if (b.error) out << ' ' << to_string(*b.error);
    out << '\n';
  }
  for (const auto& a : r.output_artifacts) out << "artifact=" << a.string() << '\n';
}

RunOptions make_options(const Globals& g, const std::string& run_id, std::ostream& err) {
  RunOptions o;
  o.run_id = run_id;
  o.journal_dir = runs_dir(g);
  o.results_dir = results_dir(g, run_id);
  o.staging_root = fs::path(g.state_dir) / "staging";
  o.on_stage = [&err](const std::string& id, const StageEntry& e) {
    err << "[" << e.at << "] " << id << ' ' << to_string(e.stage) << (e.detail.empty() ? "" : ": " + e.detail) << '\n';
  };
  return o;
}

CLI::Option* add_sim_flag(CLI::App* cmd, Globals& g) {
  return cmd->add_option("--simulate", g.topology_path, "Use the embedded simulator (optional topology JSON)")
      ->expected(0, 1);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Run containerized workflows on a Slurm cluster", "slurmbridge"};
  app.require_subcommand(1);
  Globals g;
  if (const char* env = std::getenv(kConfigEnv)) g.config_path = env;
  else g.config_path = "./slurm-config.ini";
  app.add_option("--config", g.config_path, "Configuration file (env " + std::string(kConfigEnv) + ")");
  app.add_option("--state-dir", g.state_dir, "Local state: journals, results, simulator state");

  std::vector<CLI::Option*> sim_flags;
  auto* validate = app.add_subcommand("validate", "Check a workflow descriptor and print its parameters");
  std::string descriptor_path;
  validate->add_option("descriptor", descriptor_path)->required();

  auto* init = app.add_subcommand("init", "Provision the remote scratch layout, images and job scripts");
  sim_flags.push_back(add_sim_flag(init, g));

  auto* run = app.add_subcommand("run", "Run a workflow over an input folder and wait for it");
  std::string workflow, input_dir, output_mode_text = "zip", output_dir = "results";
  std::vector<std::string> params;
  std::optional<long long> batch_size;
  bool skip_conversion = false, detach = false;
  double poll_s = 0;
  run->add_option("workflow", workflow)->required();
  run->add_option("--param", params, "id=value (repeatable)");
  run->add_option("--input", input_dir, "Folder of TIFF / OME-TIFF / .zarr inputs")->required();
  run->add_option("--batch-size", batch_size, "Items per job (default: all in one)");
  run->add_option("--output-mode", output_mode_text, "images | sidecar | zip");
  run->add_option("--output", output_dir, "Destination for imported results");
  run->add_flag("--skip-conversion", skip_conversion);
  run->add_flag("--detach", detach, "Return once jobs are queued; finish with `fetch`");
  run->add_option("--poll-interval", poll_s, "Seconds between accounting polls");
  sim_flags.push_back(add_sim_flag(run, g));

  std::string run_id;
  auto* status = app.add_subcommand("status", "Show a run's state from its journal");
  status->add_option("run_id", run_id)->required();
  sim_flags.push_back(add_sim_flag(status, g));

  auto* logs = app.add_subcommand("logs", "Print a run's retrieved log files");
  logs->add_option("run_id", run_id)->required();

  auto* fetch = app.add_subcommand("fetch", "Finish a detached run if needed and import its results");
  std::string fetch_dir = "results", fetch_mode_text = "zip";
  fetch->add_option("run_id", run_id)->required();
  fetch->add_option("--output", fetch_dir);
  fetch->add_option("--output-mode", fetch_mode_text, "images | sidecar | zip");
  sim_flags.push_back(add_sim_flag(fetch, g));

  auto* cancel = app.add_subcommand("cancel", "Cancel a run's outstanding jobs");
  cancel->add_option("run_id", run_id)->required();
  sim_flags.push_back(add_sim_flag(cancel, g));

  auto* list = app.add_subcommand("list", "List registered workflows");

  std::vector<const char*> argv{"slurmbridge"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (const auto* flag : sim_flags) g.simulate |= flag->count() > 0;

  try {
    if (*validate) {
      std::ifstream in(descriptor_path, std::ios::binary);
      if (!in) throw Error(Errc::MalformedDocument, descriptor_path, "cannot read descriptor");
      const auto d = parse_descriptor(std::string(std::istreambuf_iterator<char>(in), {}));
      for (const auto& w : d.warnings) err << "warning: " << w << '\n';
      out << "name=" << d.name << '\n' << "params=" << d.params.size() << '\n';
      out << std::left << std::setw(20) << "ID" << std::setw(9) << "TYPE" << std::setw(10) << "REQUIRED"
          << std::setw(12) << "DEFAULT" << "LABEL" << '\n';
      for (const auto& f : describe_form(d))
        out << std::left << std::setw(20) << f.id << std::setw(9) << to_string(f.type) << std::setw(10)
            << (f.required ? "yes" : "no") << std::setw(12) << value_text(f.default_value) << f.label << '\n';
      return kExitOk;
    }

    const auto cfg = load_config(g.config_path);

    if (*list) {
      for (const auto& [name, entry] : cfg.registry.entries) {
        const auto r = resolve_workflow(cfg.registry, name);
        out << "workflow=" << name << " version=" << r.version << " image=" << r.image_reference
            << " reproducible=" << (r.reproducible ? "true" : "false") << '\n';
      }
      return kExitOk;
    }

    if (*logs) {
      const auto record = load_record(runs_dir(g), run_id);
      std::size_t printed = 0;
      for (const auto& b : record.batches)
        for (const auto& l : b.logs) {
          std::ifstream in(l, std::ios::binary);
          if (!in) continue;
          out << "==> " << l.string() << " <==\n" << in.rdbuf();
          ++printed;
        }
      if (printed == 0) {
        err << "no log files retrieved for run " << run_id << '\n';
        return kExitRunFailure;
      }
      return kExitOk;
    }

    Backend backend(g, cfg);
    const RunContext ctx{backend.pool(), backend.clock(), cfg};

    if (*init) {
      auto lease = backend.pool().acquire();
      const auto report = init_environment(*lease, cfg.profile, cfg.registry);
      backend.save();
      out << "created_dirs=" << report.created_dirs.size() << '\n';
      for (const auto& d : report.created_dirs) out << "created=" << d << '\n';
      out << "pulls=" << report.pulled_images.size() << '\n';
      for (const auto& [name, path] : report.pulled_images) out << "pulled=" << name << ':' << path << '\n';
      out << "scripts_placed=" << report.placed_scripts.size() << '\n';
      out << "refreshed=" << (report.refreshed ? "true" : "false") << '\n';
      out << "failures=" << report.failures.size() << '\n';
      for (const auto& [name, msg] : report.failures) {
        out << "failure=" << name << '\n';
        err << "error: " << name << ": " << msg << '\n';
      }
      return report.failures.empty() ? kExitOk : kExitRunFailure;
    }

    if (*run) {
      const auto mode = parse_output_mode(output_mode_text);
      if (!mode) throw Error(Errc::InvalidValue, "--output-mode", "expected images, sidecar or zip");
      const auto descriptor = load_workflow_descriptor(cfg, workflow);
      ParamValues values;
      for (const auto& p : params) {
        const auto eq = p.find('=');
        if (eq == std::string::npos || eq == 0) throw Error(Errc::InvalidValue, p, "expected --param id=value");
        const auto id = p.substr(0, eq);
        const auto* spec = descriptor.find(id);
        if (!spec) throw Error(Errc::UnknownParam, id, "not declared by workflow " + workflow);
        values[id] = parse_value(id, spec->value_type, std::string_view(p).substr(eq + 1));
      }
      const auto items = discover_inputs(input_dir);
      const auto size = batch_size.value_or(std::max<long long>(1, static_cast<long long>(items.size())));
      auto options = make_options(g, generate_run_id(), err);
      options.skip_conversion = skip_conversion;
      if (poll_s > 0) options.poll_interval = std::chrono::milliseconds(static_cast<std::int64_t>(poll_s * 1000));

      RunRecord record;
      try {
        record = start_run(ctx, workflow, values, items, size, options);
        if (!detach) finish_run(ctx, record, options);
      } catch (...) {
        backend.save();
        throw;
      }
      backend.save();
      print_record(out, record);
      if (detach && !is_final(record.overall_state)) return kExitOk;
      if (record.overall_state != RunStage::Done && record.overall_state != RunStage::PartialFailure)
        return kExitRunFailure;
      if (!record.batches.empty())
        for (const auto& p : import_results(record, output_dir, *mode)) out << "imported=" << p.string() << '\n';
      return record.overall_state == RunStage::Done ? kExitOk : kExitRunFailure;
    }

    if (*status) {
      const auto lines = Journal::read(runs_dir(g), run_id);
      auto record = load_record(runs_dir(g), run_id);
      if (!is_final(record.overall_state)) {
        std::vector<JobHandle> handles;
        for (const auto& b : record.batches)
          if (b.workflow_handle) handles.push_back(*b.workflow_handle);
        if (!handles.empty()) {
          auto lease = backend.pool().acquire();
          const auto states = poll_jobs(*lease, handles);
          for (auto& b : record.batches)
            if (b.workflow_handle) b.state = states.at(b.workflow_handle->job_id);
        }
      }
      print_record(out, record);
      for (const auto& l : lines)
        if (parse_run_stage(l.kind)) out << "stage=" << l.kind << ' ' << l.at << '\n';
      if (!lines.empty()) out << "last=" << lines.back().kind << ' ' << lines.back().detail << '\n';
      return kExitOk;
    }

    if (*cancel) {
      const auto record = load_record(runs_dir(g), run_id);
      std::vector<std::int64_t> ids;
      {
        auto lease = backend.pool().acquire();
        ids = cancel_run(*lease, record);
      }
      backend.save();
      Journal journal(runs_dir(g), run_id);
      std::string detail;
      for (auto id : ids) {
        out << "cancelled=" << id << '\n';
        detail += (detail.empty() ? "" : ",") + std::to_string(id);
      }
      journal.append("cancel", detail.empty() ? "nothing outstanding" : "jobs=" + detail);
      return kExitOk;
    }

    if (*fetch) {
      const auto mode = parse_output_mode(fetch_mode_text);
      if (!mode) throw Error(Errc::InvalidValue, "--output-mode", "expected images, sidecar or zip");
      auto record = load_record(runs_dir(g), run_id);
      if (!is_final(record.overall_state)) {
        auto options = make_options(g, run_id, err);
        try {
          finish_run(ctx, record, options);
        } catch (...) {
          backend.save();
          throw;
        }
        backend.save();
      }
      print_record(out, record);
      for (const auto& p : import_results(record, fetch_dir, *mode)) out << "imported=" << p.string() << '\n';
      return record.overall_state == RunStage::Done ? kExitOk : kExitRunFailure;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_usage_error(e.code()) ? kExitUsage : kExitRunFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRunFailure;
  }
  return kExitUsage;
}

}  // namespace slurmbridge
