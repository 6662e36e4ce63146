#include <doctest.h>

#include "slurmbridge/archive.hpp"
#include "slurmbridge/digest.hpp"
#include "slurmbridge/error.hpp"
#include "slurmbridge/jobscript.hpp"
#include "slurmbridge/slurm_client.hpp"
#include "support.hpp"

using namespace slurmbridge;
using namespace std::chrono_literals;
using S = JobState;
using testing::TempDir;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::CorruptArchive;
}

// Endpoint that answers every command from a fixed script, for grammar tests.
class ScriptedEndpoint final : public Endpoint {
 public:
  std::vector<ExecResult> replies;
  std::vector<std::vector<std::string>> calls;

  ExecResult exec(const std::vector<std::string>& argv, const ExecOptions& = {}) override {
    calls.push_back(argv);
    // uploads land for real so transfer verification sees the right digest
    if (argv.front() == "sha256sum" && argv.size() == 2 && digests_.count(argv[1]))
      return {0, digests_[argv[1]] + "  " + argv[1] + "\n", "", 0};
    if (argv.front() == "mv" && argv.size() == 3 && digests_.count(argv[1])) {
      digests_[argv[2]] = digests_[argv[1]];
      digests_.erase(argv[1]);
    }
    if (argv.front() != "sacct" && argv.front() != "sbatch") return {};
    if (replies.empty()) return {};
    auto r = replies.front();
    replies.erase(replies.begin());
    if (r.exit_code == -1) throw Error(Errc::ConnectionLost, "scripted");
    return r;
  }

 protected:
  void upload(const std::filesystem::path& local, const std::string& remote) override {
    digests_[remote] = sha256_file(local);
  }
  void download(const std::string&, const std::filesystem::path&) override {}

 private:
  std::map<std::string, std::string> digests_;
};

const std::string kScratch = "/scratch/t";

ClusterProfile profile() {
  ClusterProfile p;
  p.host = "h";
  p.user = "u";
  p.scratch_dir = kScratch;
  return p;
}

std::string job_text(double duration_s, int outputs = -1, const std::string& extra = {}) {
  std::string t = "#!/bin/bash\n#SBATCH --cpus-per-task=1\n#SBATCH --output=" + kScratch + "/logs/omero-job-%j.log\n" +
                  extra + "#SIM duration=" + std::to_string(duration_s);
  if (outputs >= 0) t += " outputs=" + std::to_string(outputs);
  return t + "\ntrue\n";
}

struct Fixture {
  std::shared_ptr<SimCluster> sim = std::make_shared<SimCluster>();
  SimEndpoint ep{sim};
  SimClock clock{sim};

  Fixture() { init_environment(ep, profile(), {}); }

  JobHandle submit(double duration_s, const EnvList& env = {}, const std::string& extra = {}, int outputs = -1) {
    static int n = 0;
    return submit_job(ep, job_text(duration_s, outputs, extra), kScratch + "/slurm-scripts/jobs/t" + std::to_string(++n) + ".sh",
                      env);
  }
};

}  // namespace

TEST_SUITE("client.init") {
  TEST_CASE("empty registry creates the layout and nothing else") {
    auto sim = std::make_shared<SimCluster>();
    SimEndpoint ep(sim);
    auto p = profile();
    p.converters[{"zarr", "tiff"}] = "ns/conv:1";
    const auto r = init_environment(ep, p, {});
    CHECK(r.created_dirs == std::vector<std::string>{kScratch + "/singularity_images", kScratch + "/slurm-scripts/jobs",
                                                     kScratch + "/data", kScratch + "/logs"});
    CHECK(r.pulled_images.empty());
    CHECK(r.images.empty());
    CHECK_FALSE(r.refreshed);
  }

  TEST_CASE("registry entry pulls its image and places a script; second call is a refresh") {
    auto sim = std::make_shared<SimCluster>();
    SimEndpoint ep(sim);
    const auto cfg = parse_config(testing::test_config_text() +
                                  "[workflow.cellpose]\nrepo = https://h/W_NucleiSegmentation-Cellpose\nversion = v1.0.0\n");
    const auto first = init_environment(ep, cfg.profile, cfg.registry);
    CHECK(std::count(first.pulled_images.begin(), first.pulled_images.end(),
                     std::make_pair(std::string("cellpose"),
                                    std::string(testing::kScratch) + "/singularity_images/cellpose_v1.0.0.sif")) == 1);
    CHECK(first.pulled_images.size() == 3);  // two workflows + the zarr converter
    CHECK(first.scripts.size() == 2);
    const auto before = sim->tree_snapshot(testing::kScratch);
    const auto second = init_environment(ep, cfg.profile, cfg.registry);
    CHECK(second.refreshed);
    CHECK(second.pulled_images.empty());
    CHECK(second.placed_scripts.empty());
    CHECK(sim->tree_snapshot(testing::kScratch) == before);
  }

  TEST_CASE("a version change re-pulls only that workflow") {
    auto sim = std::make_shared<SimCluster>();
    SimEndpoint ep(sim);
    auto cfg = parse_config(testing::test_config_text());
    init_environment(ep, cfg.profile, cfg.registry);
    cfg.registry.entries.at("seg").version = "v2.0.0";
    const auto r = init_environment(ep, cfg.profile, cfg.registry);
    REQUIRE(r.pulled_images.size() == 1);
    CHECK(r.pulled_images[0].first == "seg");
    CHECK(r.placed_scripts.size() == 1);
  }

  TEST_CASE("pull failure is reported per workflow") {
    auto sim = std::make_shared<SimCluster>();
    SimEndpoint ep(sim);
    const auto cfg = parse_config(testing::test_config_text() +
                                  "[workflow.other]\nrepo = https://h/Other\nversion = v1\n");
    sim->fail_pulls_matching("w_segment-test");
    const auto r = init_environment(ep, cfg.profile, cfg.registry);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].first == "seg");
    CHECK(r.images.count("other") == 1);
    CHECK(r.images.count("seg") == 0);
  }

  TEST_CASE("unwritable scratch") {
    auto sim = std::make_shared<SimCluster>();
    SimEndpoint ep(sim);
    sim->set_read_only("/scratch");
    CHECK(code_of([&] { init_environment(ep, profile(), {}); }) == Errc::ScratchUnwritable);
  }
}

TEST_SUITE("client.submit") {
  TEST_CASE("grammar") {
    ScriptedEndpoint ep;
    ep.replies = {{0, "Submitted batch job 42\n", "", 0}};
    CHECK(submit_job(ep, "#!/bin/bash\ntrue\n", "/s/a.sh", {}).job_id == 42);
    ep.replies = {{1, "", "sbatch: error: Invalid partition", 0}};
    CHECK(code_of([&] { submit_job(ep, "#!/bin/bash\n", "/s/a.sh", {}); }) == Errc::SubmitRejected);
    ep.replies = {{0, "queued somewhere\n", "", 0}};
    CHECK(code_of([&] { submit_job(ep, "#!/bin/bash\n", "/s/a.sh", {}); }) == Errc::UnparseableJobId);
  }

  TEST_CASE("array submission yields one parent handle") {
    Fixture f;
    ConversionRequest req{3, "zarr", "tiff", kScratch + "/data/x/in"};
    auto p = profile();
    p.converters[{"zarr", "tiff"}] = "ns/conv:1";
    const auto h = submit_job(f.ep, render_script(generate_conversion_script(req, p)), kScratch + "/data/c.sh", {},
                              JobKind::ConversionArray);
    CHECK(h.kind == JobKind::ConversionArray);
    CHECK(h.array_size == 3);
    CHECK(f.sim->jobs().size() == 1);
    CHECK(f.sim->job(h.job_id)->tasks.size() == 3);
    CHECK(h.logfile_path == kScratch + "/logs/omero-job-%A_%a.log");
  }
}

TEST_SUITE("client.poll") {
  TEST_CASE("token mapping and single exec") {
    ScriptedEndpoint ep;
    ep.replies = {{0, "42|RUNNING\n43_0|COMPLETED\n43_1|FAILED\n43_2|COMPLETED\n", "", 0}};
    JobHandle a;
    a.job_id = 42;
    JobHandle b;
    b.job_id = 43;
    b.kind = JobKind::ConversionArray;
    b.array_size = 3;
    const auto states = poll_jobs(ep, {a, b});
    CHECK(states.at(42) == S::Running);
    CHECK(states.at(43) == S::Failed);
    CHECK(ep.calls.size() == 1);
  }

  TEST_CASE("absent ids are pending, unknown tokens are errors") {
    ScriptedEndpoint ep;
    ep.replies = {{0, "", "", 0}};
    JobHandle a;
    a.job_id = 7;
    CHECK(poll_jobs(ep, {a}).at(7) == S::Pending);
    ep.replies = {{0, "7|WEIRD\n", "", 0}};
    CHECK(code_of([&] { poll_jobs(ep, {a}); }) == Errc::UnknownState);
    ep.replies = {{1, "", "slurmdbd down", 0}};
    CHECK(code_of([&] { poll_jobs(ep, {a}); }) == Errc::AccountingUnavailable);
  }

  TEST_CASE("array tasks not yet listed count as pending") {
    ScriptedEndpoint ep;
    ep.replies = {{0, "9_0|COMPLETED\n9_[1-3]|PENDING\n", "", 0}};
    JobHandle h;
    h.job_id = 9;
    h.kind = JobKind::ConversionArray;
    h.array_size = 4;
    CHECK(poll_jobs(ep, {h}).at(9) == S::Running);
    ep.replies = {{0, "9_0|COMPLETED\n", "", 0}};
    CHECK(poll_jobs(ep, {h}).at(9) == S::Running);
  }
}

TEST_SUITE("client.wait") {
  TEST_CASE("already terminal: one poll") {
    Fixture f;
    const auto h = f.submit(5);
    f.sim->advance(10s);
    const auto r = wait_terminal(f.ep, f.clock, {h}, 10s, 600s);
    CHECK(r.polls == 1);
    CHECK(r.states.at(h.job_id) == S::Completed);
  }

  TEST_CASE("job finishing at t=30s with 10s polls") {
    Fixture f;
    const auto h = f.submit(30);
    const auto r = wait_terminal(f.ep, f.clock, {h}, 10s, 600s);
    CHECK(r.polls <= 4);
    CHECK(r.states.at(h.job_id) == S::Completed);
    CHECK_FALSE(r.deadline_exceeded);
  }

  TEST_CASE("deadline shorter than the job") {
    Fixture f;
    const auto h = f.submit(60);
    const auto r = wait_terminal(f.ep, f.clock, {h}, 1s, 5s);
    CHECK(r.deadline_exceeded);
    CHECK(r.states.at(h.job_id) == S::Running);
  }

  TEST_CASE("transient accounting errors are absorbed, the third is not") {
    Fixture f;
    const auto h = f.submit(30);
    f.sim->inject_transport_failures("sacct", 2);
    CHECK(wait_terminal(f.ep, f.clock, {h}, 10s, 600s).states.at(h.job_id) == S::Completed);

    ScriptedEndpoint ep;
    ep.replies = {{1, "", "x", 0}, {1, "", "x", 0}, {1, "", "x", 0}};
    SimClock clock(f.sim);
    JobHandle j;
    j.job_id = 1;
    CHECK(code_of([&] { wait_terminal(ep, clock, {j}, 1s, 600s); }) == Errc::AccountingUnavailable);
  }
}

TEST_SUITE("client.cancel") {
  TEST_CASE("pending job becomes CANCELLED") {
    Fixture f;
    const auto blocker = f.submit(100, {}, "#SBATCH --cpus-per-task=4\n");
    (void)blocker;
    const auto h = f.submit(10, {}, "");
    f.sim->advance(0s);
    cancel_job(f.ep, h);
    CHECK(poll_jobs(f.ep, {h}).at(h.job_id) == S::Cancelled);
  }

  TEST_CASE("completed job stays COMPLETED") {
    Fixture f;
    const auto h = f.submit(1);
    f.sim->advance(5s);
    cancel_job(f.ep, h);
    CHECK(poll_jobs(f.ep, {h}).at(h.job_id) == S::Completed);
  }
}

TEST_SUITE("client.logs") {
  TEST_CASE("failed job log is fetched intact") {
    Fixture f;
    TempDir tmp;
    f.sim->inject_fault({FaultDirective::Match::NextSubmission, 0, {}, S::Failed, false});
    const auto h = f.submit(5);
    f.sim->advance(10s);
    const auto files = fetch_logfile(f.ep, h, tmp.path());
    REQUIRE(files.size() == 1);
    CHECK(testing::read_file(files[0]) == *f.sim->read_file(kScratch + "/logs/omero-job-" + std::to_string(h.job_id) + ".log"));
  }

  TEST_CASE("cleaned log is LogMissing") {
    Fixture f;
    TempDir tmp;
    const auto h = f.submit(5);
    f.sim->advance(10s);
    f.ep.remove_tree(kScratch + "/logs/omero-job-" + std::to_string(h.job_id) + ".log");
    CHECK(code_of([&] { fetch_logfile(f.ep, h, tmp.path()); }) == Errc::LogMissing);
  }

  TEST_CASE("array parent: per-task logs") {
    Fixture f;
    TempDir tmp;
    auto p = profile();
    p.converters[{"zarr", "tiff"}] = "ns/conv:1";
    const auto h = submit_job(f.ep, render_script(generate_conversion_script({3, "zarr", "tiff", kScratch + "/data/x"}, p)),
                              kScratch + "/data/c.sh", {}, JobKind::ConversionArray);
    f.sim->advance(200s);
    const auto files = fetch_logfile(f.ep, h, tmp.path());
    std::set<std::string> names;
    for (const auto& file : files) names.insert(file.filename().string());
    const auto id = std::to_string(h.job_id);
    // oracle: whatever the simulator wrote under logs/ for this job
    std::set<std::string> expected;
    for (const auto& candidate : logfile_candidates(h))
      if (f.sim->read_file(candidate)) expected.insert(std::filesystem::path(candidate).filename().string());
    CHECK(names == expected);
    CHECK(names.count("omero-job-" + id + "_0.log") == 1);
    CHECK(names.count("omero-job-" + id + "_2.log") == 1);
  }
}

TEST_SUITE("client.results") {
  TEST_CASE("three outputs: archive entries match the remote files") {
    Fixture f;
    TempDir tmp;
    const auto out = kScratch + "/data/r1/batch0/out";
    f.ep.make_dirs(out);
    for (const char* name : {"a_mask.tiff", "b_mask.tiff", "c_mask.tiff"})
      f.sim->write_file(out + "/" + name, std::string("payload-") + name);
    const auto zip = fetch_results(f.ep, out, tmp.path(), "r1_batch0.zip");
    const auto entries = read_zip_file(zip);
    REQUIRE(entries.size() == 3);
    for (const auto& e : entries) CHECK(*f.sim->read_file(out + "/" + e.name) == e.data);
    CHECK_FALSE(f.ep.path_exists(kScratch + "/data/r1/batch0/r1_batch0.zip"));
  }

  TEST_CASE("empty out dir") {
    Fixture f;
    TempDir tmp;
    f.ep.make_dirs(kScratch + "/data/r/out");
    CHECK(code_of([&] { fetch_results(f.ep, kScratch + "/data/r/out", tmp.path(), "x.zip"); }) == Errc::EmptyOutput);
    CHECK(code_of([&] { fetch_results(f.ep, kScratch + "/data/none/out", tmp.path(), "x.zip"); }) == Errc::SourceMissing);
  }

  TEST_CASE("nested entries keep their relative path") {
    Fixture f;
    TempDir tmp;
    const auto out = kScratch + "/data/r/out";
    f.ep.make_dirs(out + "/masks");
    f.sim->write_file(out + "/masks/a.tiff", "A");
    const auto entries = read_zip_file(fetch_results(f.ep, out, tmp.path(), "x.zip"));
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].name == "masks/a.tiff");
  }

  TEST_CASE("missing-output fault surfaces as EmptyOutput") {
    Fixture f;
    TempDir tmp;
    const auto dir = kScratch + "/data/r2";
    f.ep.make_dirs(dir + "/in");
    f.ep.make_dirs(dir + "/out");
    f.sim->write_file(dir + "/in/a.tiff", "x");
    f.sim->inject_fault({FaultDirective::Match::NextSubmission, 0, {}, std::nullopt, true});
    const auto h = f.submit(5, {{"IN_PATH", dir + "/in"}, {"OUT_PATH", dir + "/out"}});
    f.sim->advance(10s);
    CHECK(f.sim->job(h.job_id)->state() == S::Completed);
    CHECK(code_of([&] { fetch_results(f.ep, dir + "/out", tmp.path(), "x.zip"); }) == Errc::EmptyOutput);
  }
}

TEST_SUITE("client.cleanup") {
  TEST_CASE("removes run data, keeps logs, idempotent") {
    for (bool fail : {false, true}) {
      Fixture f;
      const auto dir = kScratch + "/data/run9";
      f.ep.make_dirs(dir + "/batch0/out");
      if (fail) f.sim->inject_fault({FaultDirective::Match::NextSubmission, 0, {}, S::Failed, false});
      const auto h = f.submit(5);
      f.sim->advance(10s);
      const auto logs_before = f.sim->tree_snapshot(kScratch + "/logs");
      const auto before = f.sim->tree_snapshot(kScratch);
      CHECK(cleanup_run(f.ep, {dir}) == std::vector<std::string>{dir});
      CHECK_FALSE(f.ep.path_exists(dir));
      CHECK(f.sim->tree_snapshot(kScratch + "/logs") == logs_before);
      // tree diff: only lines under the run dir disappeared
      std::istringstream a(before), b(f.sim->tree_snapshot(kScratch));
      std::set<std::string> la, lb;
      for (std::string l; std::getline(a, l);) la.insert(l);
      for (std::string l; std::getline(b, l);) lb.insert(l);
      for (const auto& l : la)
        if (!lb.count(l)) CHECK(l.find(dir) != std::string::npos);
      CHECK(cleanup_run(f.ep, {dir}).empty());
      (void)h;
    }
  }
}
