#include "slurmbridge/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include "slurmbridge/jobscript.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;

namespace {

// Single serialized sink for stage transitions, journal lines and record snapshots.
class RunSink {
 public:
  RunSink(RunRecord& record, const RunOptions& options) : record_(record), options_(options) {
    if (options.journal_dir) journal_.emplace(*options.journal_dir, record.run_id);
  }

  void stage(RunStage s, const std::string& detail) {
    std::lock_guard lock(mutex_);
    if (!record_.stages.empty() && s <= record_.overall_state) return;
    StageEntry e{s, iso8601_now(), detail};
    record_.stages.push_back(e);
    record_.overall_state = s;
    if (journal_) journal_->append(to_string(s), detail);
    persist_locked();
    if (options_.on_stage) options_.on_stage(record_.run_id, e);
  }

  void note(std::string_view kind, const std::string& detail) {
    std::lock_guard lock(mutex_);
    if (journal_) journal_->append(kind, detail);
  }

  void persist() {
    std::lock_guard lock(mutex_);
    persist_locked();
  }

 private:
  void persist_locked() {
    if (options_.journal_dir) save_record(*options_.journal_dir, record_);
  }

  RunRecord& record_;
  const RunOptions& options_;
  std::optional<Journal> journal_;
  std::mutex mutex_;
};

template <typename F>
void parallel_for(std::size_t n, std::size_t limit, F&& body) {
  const std::size_t workers = std::min(std::max<std::size_t>(limit, 1), n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w)
    threads.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
    });
  for (auto& t : threads) t.join();
}

std::string run_dir(const ClusterConfig& cfg, const std::string& run_id) {
  return data_dir(cfg.profile.scratch_dir) + "/" + run_id;
}

std::string batch_label(const BatchRun& b) { return "batch=" + std::to_string(b.index); }

std::chrono::milliseconds poll_interval(const RunContext& ctx, const RunOptions& options) {
  if (options.poll_interval) return *options.poll_interval;
  return std::chrono::milliseconds(static_cast<std::int64_t>(ctx.config.profile.poll_interval_s * 1000));
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::SourceMissing, p.string(), "cannot read");
  return {std::istreambuf_iterator<char>(in), {}};
}

void transfer_batch(Endpoint& ep, const BatchRun& batch, const fs::path& zip) {
  ep.make_dirs(batch.remote_dir);
  const auto remote_zip = batch.remote_dir + "/inputs.zip";
  ep.put_file(zip, remote_zip);
  const auto r = ep.exec({"unzip", "-q", "-o", remote_zip, "-d", batch.remote_dir});
  if (!r.ok()) throw Error(Errc::TransferFailed, remote_zip, "unzip exit " + std::to_string(r.exit_code) + ": " + r.stderr_text);
  for (const char* sub : {"/in", "/out", "/gt"}) ep.make_dirs(batch.remote_dir + sub);
  ep.remove_tree(remote_zip);
}

struct WorkflowSubmission {
  std::string script;
  EnvList env;
};

WorkflowSubmission workflow_submission(const RunContext& ctx, const WorkflowDescriptor& descriptor,
                                       const RunRecord& record, const BatchRun& batch) {
  const auto& cfg = ctx.config;
  const auto& entry = cfg.registry.entries.at(record.workflow);
  const RunPaths paths{batch.remote_dir + "/in", batch.remote_dir + "/out", batch.remote_dir + "/gt",
                       workflow_image_file(cfg.profile.scratch_dir, record.workflow, record.version)};
  if (entry.job_script_source == JobScriptSource::Generated)
    return {render_script(generate_workflow_script(descriptor, effective_resources(cfg.registry, record.workflow),
                                                   record.values, paths, cfg.profile)),
            {}};
  // Repo-provided scripts get everything through the submission environment.
  WorkflowSubmission s{read_text(*entry.job_script), env_assignments(descriptor, record.values)};
  std::string params;
  for (const auto& tok : render_cli_args(descriptor, record.values)) params += (params.empty() ? "" : " ") + shell_quote(tok);
  s.env.emplace_back("IN_PATH", paths.in_dir);
  s.env.emplace_back("OUT_PATH", paths.out_dir);
  s.env.emplace_back("GT_PATH", paths.gt_dir);
  s.env.emplace_back("IMAGE_FILE", paths.image_file);
  s.env.emplace_back("PARAMS", params);
  return s;
}

// Waits for `handles`, marking the run Running once any job has left PENDING.
WaitResult await_jobs(const RunContext& ctx, Endpoint& ep, const std::vector<JobHandle>& handles,
                      const RunOptions& options, RunSink& sink, const std::string& what) {
  auto result = wait_terminal(ep, ctx.clock, handles, poll_interval(ctx, options), options.deadline,
                              [&](const std::map<std::int64_t, JobState>& states) {
                                for (const auto& [id, st] : states)
                                  if (st != JobState::Pending) {
                                    sink.stage(RunStage::Running, what + " started");
                                    return;
                                  }
                              });
  if (result.deadline_exceeded) {
    for (const auto& h : handles)
      if (!is_terminal(result.states[h.job_id])) cancel_job(ep, h);
    // record what the scheduler says after the cancel; keep the last poll if it cannot answer
    try {
      for (const auto& [id, st] : poll_jobs(ep, handles)) result.states[id] = st;
    } catch (const Error&) {
    }
  }
  return result;
}

void remove_local(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
}

void cleanup_everything(const RunContext& ctx, const RunRecord& record, const RunOptions& options, RunSink& sink) {
  try {
    auto lease = ctx.pool.acquire();
    const auto removed = cleanup_run(*lease, {run_dir(ctx.config, record.run_id)});
    sink.note("cleanup", "removed=" + std::to_string(removed.size()));
  } catch (const std::exception& e) {
    sink.note("cleanup", std::string("remote cleanup failed: ") + e.what());
  }
  remove_local(options.staging_root / record.run_id);
}

}  // namespace

WorkflowDescriptor load_workflow_descriptor(const ClusterConfig& config, const std::string& workflow) {
  const auto resolved = resolve_workflow(config.registry, workflow);
  const auto& entry = config.registry.entries.at(workflow);
  if (entry.descriptor) return parse_descriptor(read_text(*entry.descriptor));
  WorkflowDescriptor d;
  d.name = workflow;
  d.schema_version = std::string(kSupportedSchema);
  const auto& ref = resolved.image_reference;
  const auto colon = ref.find_last_of(':');
  const bool tagged = colon != std::string::npos && ref.find('/', colon) == std::string::npos;
  d.container_image = tagged ? ref.substr(0, colon) : ref;
  d.container_version = resolved.version;
  return d;
}

RunRecord start_run(RunContext ctx, const std::string& workflow, const ParamValues& values,
                    const std::vector<InputItem>& items, long long batch_size, const RunOptions& options) {
  const auto& cfg = ctx.config;
  const auto resolved = resolve_workflow(cfg.registry, workflow);
  const auto& entry = cfg.registry.entries.at(workflow);
  const auto descriptor = load_workflow_descriptor(cfg, workflow);
  const auto validated = validate_values(descriptor, values);
  const auto plan = plan_batches(items, batch_size);
  std::map<std::string, const InputItem*> by_id;
  for (const auto& item : items) {
    if (!by_id.emplace(item.id, &item).second) throw Error(Errc::DuplicateId, item.id, "item id used twice");
    std::error_code ec;
    if (!fs::exists(item.local_path, ec)) throw Error(Errc::MissingInput, item.local_path.string(), "no such input");
  }

  RunRecord record;
  record.run_id = options.run_id.value_or(generate_run_id());
  record.workflow = workflow;
  record.version = resolved.version;
  record.values = validated;
  record.batch_size = plan.batch_size;
  for (const auto& item : items) record.inputs[item.id] = item.local_path;
  record.started_at = iso8601_now();
  RunSink sink(record, options);
  sink.stage(RunStage::Preparing, "workflow=" + workflow + " version=" + resolved.version +
                                      " items=" + std::to_string(items.size()) +
                                      " batches=" + std::to_string(plan.batches.size()));
  if (items.empty()) {
    record.finished_at = iso8601_now();
    sink.stage(RunStage::Done, "no inputs");
    return record;
  }

  const auto staging = options.staging_root / record.run_id;
  try {
    for (std::size_t i = 0; i < plan.batches.size(); ++i) {
      BatchRun b;
      b.index = static_cast<int>(i);
      b.items = plan.batches[i];
      b.remote_dir = run_dir(cfg, record.run_id) + "/batch" + std::to_string(i);
      record.batches.push_back(std::move(b));
    }

    std::vector<fs::path> zips;
    for (const auto& batch : record.batches) {
      std::vector<InputItem> batch_items;
      for (const auto& id : batch.items) batch_items.push_back(*by_id.at(id));
      zips.push_back(pack_inputs(batch_items, staging / ("batch" + std::to_string(batch.index))));
    }

    sink.stage(RunStage::Transferring, std::to_string(zips.size()) + " archives");
    parallel_for(record.batches.size(), options.parallelism, [&](std::size_t i) {
      auto& batch = record.batches[i];
      try {
        auto lease = ctx.pool.acquire();
        transfer_batch(*lease, batch, zips[i]);
        sink.note("batch", batch_label(batch) + " transferred");
      } catch (const std::exception& e) {
        batch.error = Errc::TransferFailed;
        batch.error_detail = e.what();
        sink.note("batch", batch_label(batch) + " TransferFailed " + e.what());
      }
    });
    remove_local(staging);

    auto lease = ctx.pool.acquire();
    Endpoint& ep = *lease;

    const bool convert = !options.skip_conversion && entry.input_format == "tiff";
    std::vector<JobHandle> conversions;
    for (auto& batch : record.batches) {
      if (batch.error || !convert) continue;
      const auto n_zarr = std::count_if(batch.items.begin(), batch.items.end(),
                                        [&](const std::string& id) { return by_id.at(id)->format == InputFormat::Zarr; });
      if (n_zarr == 0) continue;
      try {
        const auto script = render_script(generate_conversion_script(
            {static_cast<int>(n_zarr), "zarr", "tiff", batch.remote_dir + "/in"}, cfg.profile));
        batch.conversion_handle = submit_job(ep, script, batch.remote_dir + "/convert.sh", {}, JobKind::ConversionArray);
        conversions.push_back(*batch.conversion_handle);
        sink.note("handle", batch_label(batch) + " kind=conversion job=" + std::to_string(batch.conversion_handle->job_id));
      } catch (const Error& e) {
        batch.error = Errc::ConversionFailed;
        batch.error_detail = e.what();
        sink.note("batch", batch_label(batch) + " ConversionFailed " + e.what());
      }
    }
    if (!conversions.empty()) {
      sink.stage(RunStage::Queued, std::to_string(conversions.size()) + " conversion jobs");
      const auto waited = await_jobs(ctx, ep, conversions, options, sink, "conversion");
      for (auto& batch : record.batches) {
        if (!batch.conversion_handle) continue;
        const auto st = waited.states.at(batch.conversion_handle->job_id);
        if (st == JobState::Completed) continue;
        batch.state = st;
        batch.error = Errc::ConversionFailed;
        batch.error_detail = "conversion job " + std::to_string(batch.conversion_handle->job_id) + " " +
                             std::string(to_string(st)) + (waited.deadline_exceeded ? " (deadline exceeded)" : "");
        sink.note("batch", batch_label(batch) + " ConversionFailed " + batch.error_detail);
      }
    }

    std::size_t submitted = 0;
    for (auto& batch : record.batches) {
      if (batch.error) continue;
      try {
        const auto sub = workflow_submission(ctx, descriptor, record, batch);
        batch.workflow_handle = submit_job(ep, sub.script, batch.remote_dir + "/workflow.sh", sub.env, JobKind::Workflow);
        batch.state = JobState::Pending;
        ++submitted;
        sink.note("handle", batch_label(batch) + " kind=workflow job=" + std::to_string(batch.workflow_handle->job_id));
      } catch (const Error& e) {
        batch.error = Errc::WorkflowFailed;
        batch.error_detail = e.what();
        sink.note("batch", batch_label(batch) + " WorkflowFailed " + e.what());
      }
    }
    if (submitted > 0) sink.stage(RunStage::Queued, std::to_string(submitted) + " workflow jobs");
    sink.persist();
  } catch (const std::exception& e) {
    cleanup_everything(ctx, record, options, sink);
    record.finished_at = iso8601_now();
    sink.stage(RunStage::Failed, e.what());
    throw;
  }
  return record;
}

void finish_run(RunContext ctx, RunRecord& record, const RunOptions& options) {
  if (is_final(record.overall_state)) return;
  RunSink sink(record, options);
  try {
    {
      auto lease = ctx.pool.acquire();
      std::vector<JobHandle> handles;
      for (const auto& b : record.batches)
        if (b.workflow_handle && !(b.state && is_terminal(*b.state))) handles.push_back(*b.workflow_handle);
      if (!handles.empty()) {
        const auto waited = await_jobs(ctx, *lease, handles, options, sink, "workflow");
        for (auto& b : record.batches) {
          if (!b.workflow_handle) continue;
          if (auto it = waited.states.find(b.workflow_handle->job_id); it != waited.states.end()) b.state = it->second;
          if (waited.deadline_exceeded && b.state && !is_terminal(*b.state)) {
            b.error = Errc::WorkflowFailed;
            b.error_detail = "deadline exceeded; job cancelled";
          }
          sink.note("batch", batch_label(b) + " state=" + std::string(b.state ? to_string(*b.state) : "none"));
        }
        sink.stage(RunStage::Running, "workflow jobs finished");
      }
    }

    sink.stage(RunStage::Retrieving, "results to " + options.results_dir.string());
    fs::create_directories(options.results_dir);
    parallel_for(record.batches.size(), options.parallelism, [&](std::size_t i) {
      auto& b = record.batches[i];
      const JobHandle* log_source = b.workflow_handle ? &*b.workflow_handle
                                    : b.conversion_handle ? &*b.conversion_handle
                                                          : nullptr;
      if (!log_source) return;
      try {
        auto lease = ctx.pool.acquire();
        if (b.workflow_handle && b.succeeded()) {
          try {
            b.results_zip = fetch_results(*lease, b.remote_dir + "/out", options.results_dir,
                                          record.run_id + "_batch" + std::to_string(b.index) + ".zip");
            sink.note("artifact", batch_label(b) + " " + b.results_zip->string());
          } catch (const Error& e) {
            b.error = Errc::RetrievalFailed;
            b.error_detail = e.what();
          }
        } else if (!b.error) {
          b.error = Errc::WorkflowFailed;
          b.error_detail = "job " + std::to_string(log_source->job_id) + " " +
                           std::string(b.state ? to_string(*b.state) : "unknown");
        }
        try {
          b.logs = fetch_logfile(*lease, *log_source, options.results_dir);
          for (const auto& l : b.logs) sink.note("artifact", batch_label(b) + " " + l.string());
          if (b.error) b.error_detail += "; log " + b.logs.front().string();
        } catch (const Error& e) {
          if (e.code() != Errc::LogMissing) throw;
          sink.note("batch", batch_label(b) + " " + e.what());
        }
      } catch (const std::exception& e) {
        if (!b.error) b.error = Errc::RetrievalFailed;
        b.error_detail += std::string("; ") + e.what();
      }
      if (b.error) sink.note("batch", batch_label(b) + " " + std::string(to_string(*b.error)) + " " + b.error_detail);
    });
  } catch (const std::exception& e) {
    cleanup_everything(ctx, record, options, sink);
    record.finished_at = iso8601_now();
    sink.stage(RunStage::Failed, e.what());
    throw;
  }

  cleanup_everything(ctx, record, options, sink);
  record.output_artifacts.clear();
  std::size_t ok = 0;
  for (const auto& b : record.batches) {
    if (b.results_zip) record.output_artifacts.push_back(*b.results_zip);
    record.output_artifacts.insert(record.output_artifacts.end(), b.logs.begin(), b.logs.end());
    ok += b.succeeded();
  }
  record.finished_at = iso8601_now();
  const auto detail = "succeeded=" + std::to_string(ok) + "/" + std::to_string(record.batches.size());
  if (ok == record.batches.size()) sink.stage(RunStage::Done, detail);
  else if (ok == 0) sink.stage(RunStage::Failed, detail);
  else sink.stage(RunStage::PartialFailure, detail);
}

RunRecord run_workflow_batched(RunContext ctx, const std::string& workflow, const ParamValues& values,
                               const std::vector<InputItem>& items, long long batch_size, const RunOptions& options) {
  auto record = start_run(ctx, workflow, values, items, batch_size, options);
  finish_run(ctx, record, options);
  return record;
}

RunRecord run_workflow(RunContext ctx, const std::string& workflow, const ParamValues& values,
                       const std::vector<InputItem>& items, const RunOptions& options) {
  return run_workflow_batched(ctx, workflow, values, items, std::max<long long>(1, static_cast<long long>(items.size())),
                              options);
}

std::vector<std::int64_t> cancel_run(Endpoint& ep, const RunRecord& record) {
  std::vector<std::int64_t> cancelled;
  if (is_final(record.overall_state)) return cancelled;
  for (const auto& b : record.batches) {
    if (b.state && is_terminal(*b.state)) continue;
    for (const auto* h : {b.conversion_handle ? &*b.conversion_handle : nullptr,
                          b.workflow_handle ? &*b.workflow_handle : nullptr}) {
      if (!h) continue;
      cancel_job(ep, *h);
      cancelled.push_back(h->job_id);
    }
  }
  return cancelled;
}

}  // namespace slurmbridge
