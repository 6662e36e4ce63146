#pragma once

// Shared fixtures for the test binaries.

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "slurmbridge/config.hpp"
#include "slurmbridge/jobscript.hpp"
#include "slurmbridge/orchestrator.hpp"
#include "slurmbridge/sim_cluster.hpp"
#include "slurmbridge/slurm_client.hpp"

namespace testing {

namespace fs = std::filesystem;
using namespace slurmbridge;

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = fs::temp_directory_path() / ("sbtest-" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline constexpr const char* kScratch = "/scratch/tester/sb";

inline std::string test_config_text(const std::string& extra = {}) {
  return std::string(R"ini([ssh]
host = hpc.test
user = tester
key_path = /dev/null

[cluster]
scratch_dir = /scratch/tester/sb
partition = normal
poll_interval_s = 10

[registry]
namespace = testns

[converters]
zarr_to_tiff = testns/convert_zarr_to_tiff:1.0

[workflow.seg]
repo = https://github.com/example/W_Segment-Test
version = v1.0.0
cpus = 2
mem_mb = 4096
time_limit_min = 60
)ini") + extra;
}

// Simulated cluster with a provisioned environment.
struct SimRig {
  explicit SimRig(SimTopology topo = {}, const std::string& config_extra = {})
      : sim(std::make_shared<SimCluster>(std::move(topo))),
        clock(sim),
        pool([s = sim] { return std::make_unique<SimEndpoint>(s); }),
        config(parse_config(test_config_text(config_extra))) {
    SimEndpoint ep(sim);
    env = init_environment(ep, config.profile, config.registry);
  }

  RunContext ctx() { return {pool, clock, config}; }

  RunOptions options(const fs::path& root) const {
    RunOptions o;
    o.staging_root = root / "staging";
    o.results_dir = root / "results";
    o.journal_dir = root / "runs";
    o.poll_interval = std::chrono::seconds(10);
    return o;
  }

  std::shared_ptr<SimCluster> sim;
  SimClock clock;
  EndpointPool pool;
  ClusterConfig config;
  EnvReport env;
};

inline std::vector<InputItem> make_tiffs(const fs::path& dir, int n) {
  std::vector<InputItem> items;
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img%02d.tiff", i);
    write_file(dir / name, "tiff-bytes-" + std::to_string(i));
    items.push_back(make_input_item(dir / name));
  }
  return items;
}

inline std::vector<InputItem> make_zarrs(const fs::path& dir, int n, int chunks = 3) {
  std::vector<InputItem> items;
  for (int i = 0; i < n; ++i) {
    const auto store = dir / ("plate" + std::to_string(i) + ".zarr");
    write_file(store / ".zattrs", "{}");
    for (int c = 0; c < chunks; ++c) write_file(store / "0" / std::to_string(c), "chunk" + std::to_string(c));
    items.push_back(make_input_item(store));
  }
  return items;
}

inline bool dir_is_empty_or_absent(const fs::path& p) {
  std::error_code ec;
  return !fs::exists(p, ec) || fs::is_empty(p, ec);
}

// The fixture behind tests/golden/workflow_{cpu,gpu}.sh.
inline std::string golden_workflow_script(int gpus) {
  const auto descriptor = parse_descriptor(read_file(fs::path(SLURMBRIDGE_GOLDEN_DIR) / "golden_descriptor.json"));
  ClusterProfile profile;
  profile.host = "h";
  profile.user = "u";
  profile.scratch_dir = "/scratch/u/sb";
  const RunPaths paths{"/scratch/u/sb/data/run1/batch0/in", "/scratch/u/sb/data/run1/batch0/out",
                       "/scratch/u/sb/data/run1/batch0/gt", "/scratch/u/sb/singularity_images/cellpose_v1.0.0.sif"};
  const ResourceSpec resources{4096, 2, gpus, 60};
  return render_script(
      generate_workflow_script(descriptor, resources, validate_values(descriptor, {}), paths, profile));
}

inline std::string golden_file(const std::string& name) { return read_file(fs::path(SLURMBRIDGE_GOLDEN_DIR) / name); }

}  // namespace testing
