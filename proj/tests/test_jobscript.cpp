#include <doctest.h>

#include <random>
#include <sstream>

#include "slurmbridge/error.hpp"
#include "slurmbridge/jobscript.hpp"
#include "support.hpp"

using namespace slurmbridge;
using testing::golden_file;
using testing::golden_workflow_script;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

ClusterProfile profile() {
  ClusterProfile p;
  p.host = "h";
  p.user = "u";
  p.scratch_dir = "/scratch/u/sb";
  p.converters[{"zarr", "tiff"}] = "ns/convert:1.2";
  return p;
}

WorkflowDescriptor bare(std::string name) {
  WorkflowDescriptor d;
  d.name = std::move(name);
  d.schema_version = "cytomine-0.1";
  d.container_image = "ns/x";
  d.container_version = "v1";
  d.command_line_template = "run";
  return d;
}

const RunPaths kPaths{"/s/in", "/s/out", "/s/gt", "/s/img.sif"};

std::optional<std::string> directive(const JobScript& s, const std::string& key) {
  for (const auto& d : s.directives)
    if (d.key == key) return d.value;
  return std::nullopt;
}

}  // namespace

TEST_SUITE("jobscript.workflow") {
  TEST_CASE("golden CPU script") { CHECK(golden_workflow_script(0) == golden_file("workflow_cpu.sh")); }

  TEST_CASE("golden GPU script adds exactly one gres line") {
    const auto gpu = golden_workflow_script(1);
    CHECK(gpu == golden_file("workflow_gpu.sh"));
    auto cpu_lines = lines_of(golden_workflow_script(0));
    auto gpu_lines = lines_of(gpu);
    REQUIRE(gpu_lines.size() == cpu_lines.size() + 1);
    std::vector<std::string> extra;
    std::size_t j = 0;
    for (const auto& l : gpu_lines) {
      if (j < cpu_lines.size() && l == cpu_lines[j]) ++j;
      else extra.push_back(l);
    }
    CHECK(j == cpu_lines.size());
    CHECK(extra == std::vector<std::string>{"#SBATCH --gres=gpu:1"});
  }

  TEST_CASE("resource directives") {
    const auto s = generate_workflow_script(bare("w"), {4096, 2, 0, 60}, {}, kPaths, profile());
    CHECK(directive(s, "--mem") == "4096");
    CHECK(directive(s, "--cpus-per-task") == "2");
    CHECK(directive(s, "--time") == "01:00:00");
    CHECK_FALSE(directive(s, "--gres"));
    CHECK(s.logfile_path == "/scratch/u/sb/logs/omero-job-%j.log");
    CHECK(satisfies_invariants(s));
    const auto g = generate_workflow_script(bare("w"), {4096, 2, 1, 60}, {}, kPaths, profile());
    CHECK(directive(g, "--gres") == "gpu:1");
  }

  TEST_CASE("zero params exports only the paths") {
    const auto s = generate_workflow_script(bare("w"), kFallbackResources, {}, kPaths, profile());
    CHECK(s.env_exports == EnvList{{"IN_PATH", "/s/in"}, {"OUT_PATH", "/s/out"}, {"GT_PATH", "/s/gt"}});
  }

  TEST_CASE("partition and account") {
    auto p = profile();
    p.partition = "gpu";
    p.account = "lab";
    const auto s = generate_workflow_script(bare("w"), kFallbackResources, {}, kPaths, p);
    CHECK(directive(s, "--partition") == "gpu");
    CHECK(directive(s, "--account") == "lab");
  }

  TEST_CASE("round trip recovers directives and exports") {
    for (int gpus : {0, 1, 4}) {
      const auto d = parse_descriptor(golden_file("golden_descriptor.json"));
      const auto s = generate_workflow_script(d, {1234, 3, gpus, 125}, {{"diameter", 12.5}, {"use_gpu", true}}, kPaths,
                                              profile());
      const auto text = render_script(s);
      CHECK(scan_directives(text) == s.directives);
      CHECK(scan_exports(text) == s.env_exports);
    }
  }

  TEST_CASE("launcher script") {
    const auto s = generate_launcher_script("seg", kFallbackResources, "/s/img.sif", profile());
    CHECK(satisfies_invariants(s));
    CHECK(s.body.back().find("$PARAMS") != std::string::npos);
  }
}

TEST_SUITE("jobscript.conversion") {
  TEST_CASE("array ranges") {
    const auto ten = generate_conversion_script({10, "zarr", "tiff", "/d/in"}, profile());
    CHECK(directive(ten, "--array") == "0-9");
    CHECK(ten.logfile_path == "/scratch/u/sb/logs/omero-job-%A_%a.log");
    const auto one = generate_conversion_script({1, "zarr", "tiff", "/d/in"}, profile());
    CHECK(directive(one, "--array") == "0-0");
    CHECK(satisfies_invariants(one));
  }

  TEST_CASE("errors") {
    try {
      generate_conversion_script({3, "zarr", "png", "/d"}, profile());
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::UnknownConverter);
    }
    try {
      generate_conversion_script({0, "zarr", "tiff", "/d"}, profile());
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InvalidCount);
    }
  }
}

TEST_SUITE("jobscript.render") {
  TEST_CASE("line count of a hand-built script") {
    JobScript s;
    s.directives = {{"--mem", "100"}, {"--cpus-per-task", "1"}, {"--time", "00:10:00"}, {"--output", "/l/%j.log"}};
    s.body = {"true"};
    const auto text = render_script(s);
    CHECK(text == "#!/bin/bash\n#SBATCH --mem=100\n#SBATCH --cpus-per-task=1\n#SBATCH --time=00:10:00\n"
                  "#SBATCH --output=/l/%j.log\ntrue\n");
    CHECK(lines_of(text).size() == 6);
    CHECK(render_script(s) == text);
  }

  TEST_CASE("flag-style keys use a space") {
    JobScript s;
    s.directives = {{"-p", "normal"}, {"--exclusive", ""}};
    s.body = {"true"};
    const auto text = render_script(s);
    CHECK(text.find("#SBATCH -p normal\n") != std::string::npos);
    CHECK(text.find("#SBATCH --exclusive\n") != std::string::npos);
    CHECK(scan_directives(text) == s.directives);
  }

  TEST_CASE("export escaping") {
    JobScript s;
    s.env_exports = {{"V", R"(say "hi" $HOME `x` \n)"}};
    s.body = {"true"};
    const auto text = render_script(s);
    CHECK(text.find(R"(export V="say \"hi\" \$HOME \`x\` \\n")") != std::string::npos);
    CHECK(scan_exports(text) == s.env_exports);
  }

  TEST_CASE("scanning stops at the first command") {
    CHECK(scan_directives("#!/bin/bash\n\n# note\n#SBATCH --mem=1\necho\n#SBATCH --mem=2\n") ==
          std::vector<Directive>{{"--mem", "1"}});
  }

  TEST_CASE("shell quoting") {
    CHECK(shell_quote("plain-token_1.0") == "plain-token_1.0");
    CHECK(shell_quote("a b") == "'a b'");
    CHECK(shell_quote("it's") == R"('it'\''s')");
    CHECK(shell_quote("") == "''");
  }
}

TEST_SUITE("jobscript.time") {
  TEST_CASE("examples") {
    CHECK(format_time_limit(60) == "01:00:00");
    CHECK(format_time_limit(45) == "00:45:00");
    CHECK(format_time_limit(0) == "00:00:00");
    CHECK(format_time_limit(100 * 60 + 1) == "100:01:00");
    CHECK(parse_time_limit("90") == 90 * 60);
    CHECK(parse_time_limit("1:30") == 90);
    CHECK(parse_time_limit("2-03") == 2 * 86400 + 3 * 3600);
    CHECK(parse_time_limit("1-00:10:05") == 86400 + 605);
    CHECK(parse_time_limit("x") == -1);
    CHECK(parse_time_limit("1:2:3:4") == -1);
  }

  TEST_CASE("format then parse is minutes * 60") {
    std::mt19937 rng(3);
    for (int i = 0; i < 2000; ++i) {
      const int m = std::uniform_int_distribution<int>(0, 500000)(rng);
      CHECK(parse_time_limit(format_time_limit(m)) == 60L * m);
    }
  }
}
