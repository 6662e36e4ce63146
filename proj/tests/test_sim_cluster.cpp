#include <doctest.h>

#include <random>

#include "slurmbridge/sim_cluster.hpp"
#include "slurmbridge/slurm_client.hpp"
#include "properties.hpp"

using namespace slurmbridge;
using namespace std::chrono_literals;
using S = JobState;

namespace {

using JobSpec = testing::SimJobSpec;

std::int64_t submit(SimCluster& sim, const JobSpec& spec, const std::string& name = {}) {
  return testing::submit_sim_job(sim, spec, name);
}

SimTopology one_node(int cpus) {
  SimTopology t;
  t.nodes = {SimNode{cpus, 0, 16384}};
  return t;
}

std::vector<SimEvent> events_of(const std::vector<SimEvent>& trace, std::int64_t id) {
  std::vector<SimEvent> out;
  for (const auto& e : trace)
    if (e.job_id == id) out.push_back(e);
  return out;
}

}  // namespace

TEST_SUITE("sim.exec") {
  TEST_CASE("sbatch prints the id; pending until time moves") {
    SimCluster sim(one_node(4));
    sim.exec({"mkdir", "-p", "/jobs"});
    sim.write_file("/jobs/a.sh", "#!/bin/bash\n#SBATCH --cpus-per-task=2\ntrue\n");
    const auto r = sim.exec({"sbatch", "/jobs/a.sh"});
    CHECK(r.stdout_text == "Submitted batch job 1\n");
    CHECK(sim.job(1)->state() == S::Pending);
    CHECK(sim.exec({"sacct", "-n", "-P", "-X", "-o", "JobID,State", "-j", "1"}).stdout_text == "1|PENDING\n");
    sim.advance(1s);
    CHECK(sim.job(1)->state() == S::Running);
  }

  TEST_CASE("sacct for an unknown id") {
    SimCluster sim;
    const auto r = sim.exec({"sacct", "-n", "-P", "-X", "-o", "JobID,State", "-j", "99"});
    CHECK(r.exit_code == 0);
    CHECK(r.stdout_text.empty());
  }

  TEST_CASE("never-fitting job is accepted, pends forever, shows in diagnostics") {
    SimCluster sim;  // 2 x 4 cpus
    const auto big = submit(sim, {8, 100, 0, 10});
    const auto small = submit(sim, {1, 100, 0, 10});
    sim.advance(100s);
    CHECK(sim.job(big)->state() == S::Pending);
    CHECK(sim.job(small)->state() == S::Completed);
    const auto diag = sim.diagnostics();
    REQUIRE(diag.size() == 1);
    CHECK(diag[0].job_id == big);
  }

  TEST_CASE("unsupported command and bad script") {
    SimCluster sim;
    const auto r = sim.exec({"squeue"});
    CHECK(r.exit_code == 127);
    CHECK(r.stderr_text.find("command not found") != std::string::npos);
    CHECK(sim.exec({"sbatch", "/missing.sh"}).exit_code == 1);
  }

  TEST_CASE("partition check") {
    SimTopology t;
    t.partitions = {"normal"};
    SimCluster sim(t);
    sim.exec({"mkdir", "-p", "/j"});
    sim.write_file("/j/a.sh", "#!/bin/bash\n#SBATCH --partition=gpu\ntrue\n");
    const auto r = sim.exec({"sbatch", "/j/a.sh"});
    CHECK(r.exit_code == 1);
    CHECK(r.stderr_text.find("Invalid partition") != std::string::npos);
  }
}

TEST_SUITE("sim.schedule") {
  TEST_CASE("FIFO on one node") {
    SimCluster sim(one_node(4));
    const auto a = submit(sim, {4, 100, 0, 10});
    const auto b = submit(sim, {4, 100, 0, 10});
    sim.advance(30s);
    CHECK(sim.job(a)->tasks[0].start == SimTime(0));
    CHECK(sim.job(a)->tasks[0].end == SimTime(10'000));
    CHECK(sim.job(b)->tasks[0].start == SimTime(10'000));
    CHECK(sim.job(b)->tasks[0].end == SimTime(20'000));
  }

  TEST_CASE("no backfill past a blocked head") {
    SimCluster sim(one_node(4));
    const auto a = submit(sim, {3, 100, 0, 10});
    const auto b = submit(sim, {2, 100, 0, 10});  // waits for a
    const auto c = submit(sim, {1, 100, 0, 10});  // would fit now, but b is older
    sim.advance(5s);
    CHECK(sim.job(a)->state() == S::Running);
    CHECK(sim.job(b)->state() == S::Pending);
    CHECK(sim.job(c)->state() == S::Pending);
    sim.advance(10s);
    CHECK(sim.job(b)->tasks[0].start == SimTime(10'000));
    CHECK(sim.job(c)->tasks[0].start == SimTime(10'000));
  }

  TEST_CASE("advance(0) is empty") {
    SimCluster sim;
    submit(sim, {1, 100, 0, 10});
    CHECK(sim.advance(0s).empty());
    CHECK(sim.now() == SimTime(0));
  }

  TEST_CASE("time limit gives TIMEOUT at the limit") {
    SimCluster sim;
    const auto id = submit(sim, {1, 100, 0, 100, 1});
    const auto events = sim.advance(200s);
    const auto mine = events_of(events, id);
    REQUIRE(mine.size() == 2);
    CHECK(mine[1].to == S::Timeout);
    CHECK(mine[1].time == SimTime(60'000));
  }

  TEST_CASE("array tasks are independent units") {
    SimCluster sim(one_node(4));
    const auto id = submit(sim, {2, 100, 0, 10, std::nullopt, 5});
    sim.advance(10s);
    auto job = *sim.job(id);
    CHECK(job.tasks.size() == 5);
    CHECK(job.state() == S::Running);
    sim.advance(100s);
    job = *sim.job(id);
    CHECK(job.state() == S::Completed);
    CHECK(job.tasks[4].start == SimTime(20'000));
    const auto r = sim.exec({"sacct", "-n", "-P", "-X", "-o", "JobID,State", "-j", std::to_string(id)});
    CHECK(r.stdout_text == "1_0|COMPLETED\n1_1|COMPLETED\n1_2|COMPLETED\n1_3|COMPLETED\n1_4|COMPLETED\n");
  }
}

TEST_SUITE("sim.faults") {
  TEST_CASE("forced FAILED") {
    SimCluster sim;
    sim.inject_fault({FaultDirective::Match::NextSubmission, 0, {}, S::Failed, false});
    const auto id = submit(sim, {1, 100, 0, 10});
    sim.advance(20s);
    CHECK(sim.job(id)->state() == S::Failed);
    CHECK(sim.job(id)->tasks[0].exit_code == 1);
  }

  TEST_CASE("forced TIMEOUT ends at the limit") {
    SimCluster sim;
    sim.inject_fault({FaultDirective::Match::NextSubmission, 0, {}, S::Timeout, false});
    const auto id = submit(sim, {1, 100, 0, 10, 2});
    const auto events = events_of(sim.advance(300s), id);
    REQUIRE_FALSE(events.empty());
    CHECK(events.back().to == S::Timeout);
    CHECK(events.back().time == SimTime(120'000));
  }

  TEST_CASE("job id and script path matchers") {
    SimCluster sim;
    const auto a = submit(sim, {1, 100, 0, 10}, "keep");
    sim.inject_fault({FaultDirective::Match::JobId, a, {}, S::Failed, false});
    sim.inject_fault({FaultDirective::Match::ScriptPathContains, 0, "doomed", S::Cancelled, false});
    const auto b = submit(sim, {1, 100, 0, 10}, "doomed1");
    const auto c = submit(sim, {1, 100, 0, 10}, "doomed2");
    sim.advance(60s);
    CHECK(sim.job(a)->state() == S::Failed);
    CHECK(sim.job(b)->state() == S::Cancelled);
    CHECK(sim.job(c)->state() == S::Cancelled);
  }

  TEST_CASE("scancel of a running array cancels every task") {
    SimCluster sim(one_node(4));
    const auto id = submit(sim, {2, 100, 0, 50, std::nullopt, 4});
    sim.advance(5s);
    CHECK(sim.exec({"scancel", std::to_string(id)}).ok());
    sim.advance(1s);
    const auto job = sim.job(id);
    for (const auto& t : job->tasks) CHECK(t.state == S::Cancelled);
    for (const auto& n : sim.node_usage()) CHECK(n.cpus == 0);
  }
}

TEST_SUITE("sim.properties") {
  TEST_CASE("determinism: identical scripts and steps give identical traces") {
    const auto a = testing::replay_schedule(11), b = testing::replay_schedule(11);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK_FALSE(a.first.empty());
  }

  TEST_CASE("state persists through JSON") {
    SimCluster sim;
    submit(sim, {2, 100, 0, 30});
    submit(sim, {1, 100, 0, 30, std::nullopt, 3});
    sim.advance(15s);
    const auto j = sim.to_json();
    auto back = SimCluster::from_json(j);
    CHECK(back->to_json() == j);
    CHECK(back->advance(100s) == sim.advance(100s));
  }

  TEST_CASE("resource safety and FIFO work conservation over 1000 job mixes") {
    std::mt19937 rng(1234);
    for (int mix = 0; mix < 1000; ++mix) {
      const auto why = testing::check_resource_mix(rng);
      REQUIRE_MESSAGE(why.empty(), "mix ", mix, ": ", why);
    }
  }

  TEST_CASE("500 random schedules: observed states respect the transition relation") {
    std::mt19937 rng(99);
    long observations = 0;
    for (int run = 0; run < 500; ++run) {
      const auto why = testing::check_random_schedule(rng, observations);
      REQUIRE_MESSAGE(why.empty(), "schedule ", run, ": ", why);
    }
    CHECK(observations > 0);
  }
}
