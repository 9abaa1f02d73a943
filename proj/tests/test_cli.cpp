#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "trips/eval.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cmd(const std::string& args) {
  const std::string cmd = std::string(TRIPS_BIN_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult res;
  char buf[4096];
  while (fgets(buf, sizeof(buf), pipe)) res.output += buf;
  const int status = pclose(pipe);
  res.exit_code = WEXITSTATUS(status);
  return res;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// a tiny but complete experiment: 1 seed, 1 rotation, short sessions
std::string tiny_config(const std::string& name) {
  return std::string(R"([scenario]
steps = 1
classes_per_step = 2
test_domains = d00
seeds = 5

[synthetic]
classes = 5
domains = 3
input_dim = 6
samples_per_class_per_domain = 12

[train]
lr = 0.002
max_iters = 30
per_domain_batch = 4
validation_period = 15
hidden = 10
feature_dim = 6

[output]
dir = /tmp/trips_cli_runs
name = )") + name + "\n";
}

fs::path write_config(const std::string& text, const std::string& filename) {
  const fs::path p = fs::path("/tmp") / filename;
  std::ofstream os(p);
  os << text;
  return p;
}

}  // namespace

TEST_CASE("cli: run smoke test produces the run directory artifacts") {
  fs::remove_all("/tmp/trips_cli_runs/smoke");
  const fs::path cfg = write_config(tiny_config("smoke"), "trips_cli_smoke.ini");
  const CmdResult res = run_cmd("run --config " + cfg.string());
  INFO(res.output);
  CHECK(res.exit_code == 0);
  const fs::path dir = "/tmp/trips_cli_runs/smoke";
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "metrics_seed5.csv"));
  CHECK(fs::exists(dir / "curves" / "seed5_rot0_session0.csv"));
  CHECK(fs::exists(dir / "checkpoints" / "seed5_rot0_session0.ckpt"));
  CHECK(fs::exists(dir / "checkpoints" / "seed5_rot0_session0.protos"));
}

TEST_CASE("cli: --set override lands in the manifest") {
  fs::remove_all("/tmp/trips_cli_runs/override");
  const fs::path cfg = write_config(tiny_config("override"), "trips_cli_override.ini");
  const CmdResult res =
      run_cmd("run --config " + cfg.string() + " --set train.max_iters=10");
  INFO(res.output);
  CHECK(res.exit_code == 0);
  const std::string manifest = read_file("/tmp/trips_cli_runs/override/manifest.json");
  CHECK(manifest.find("max_iters = 10") != std::string::npos);
}

TEST_CASE("cli: config errors exit 1 with a diagnostic") {
  const fs::path cfg = write_config("[scenario]\nbogus_key = 1\n", "trips_cli_bad.ini");
  const CmdResult res = run_cmd("run --config " + cfg.string());
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("bogus_key") != std::string::npos);
}

TEST_CASE("cli: same config and seed give byte-identical metrics") {
  fs::remove_all("/tmp/trips_cli_runs/det1");
  fs::remove_all("/tmp/trips_cli_runs/det2");
  const fs::path cfg = write_config(tiny_config("det1"), "trips_cli_det.ini");
  const CmdResult r1 = run_cmd("run --config " + cfg.string());
  const CmdResult r2 = run_cmd("run --config " + cfg.string() + " --set output.name=det2");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file("/tmp/trips_cli_runs/det1/metrics_seed5.csv") ==
        read_file("/tmp/trips_cli_runs/det2/metrics_seed5.csv"));
}

TEST_CASE("cli: gradcheck passes and the corruption hook fails it") {
  const CmdResult ok = run_cmd("gradcheck --instances 1 --seed 11");
  INFO(ok.output);
  CHECK(ok.exit_code == 0);
  for (const char* name :
       {"classification", "distillation", "trips_base", "pseudo", "trips_incr", "total"})
    CHECK(ok.output.find(name) != std::string::npos);

  const CmdResult bad = run_cmd("gradcheck --instances 1 --seed 11 --corrupt trips_incr");
  CHECK(bad.exit_code == 3);
  CHECK(bad.output.find("trips_incr") != std::string::npos);
}

TEST_CASE("cli: samplecheck tolerances and the draw-count precondition") {
  const CmdResult ok = run_cmd("samplecheck --dim 4 --draws 20000 --seed 3");
  INFO(ok.output);
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("mean_err_norm") != std::string::npos);

  const CmdResult refused = run_cmd("samplecheck --dim 4 --draws 10 --seed 3");
  CHECK(refused.exit_code == 1);

  // fixed seed prints identical figures
  const CmdResult again = run_cmd("samplecheck --dim 4 --draws 20000 --seed 3");
  CHECK(again.output == ok.output);
}

TEST_CASE("cli: report rows equal the metrics csv") {
  fs::remove_all("/tmp/trips_cli_runs/rep");
  const fs::path cfg = write_config(tiny_config("rep"), "trips_cli_rep.ini");
  REQUIRE(run_cmd("run --config " + cfg.string()).exit_code == 0);

  const CmdResult rep = run_cmd("report /tmp/trips_cli_runs/rep");
  INFO(rep.output);
  CHECK(rep.exit_code == 0);
  const auto reports = trips::eval::read_metrics_csv("/tmp/trips_cli_runs/rep/metrics_seed5.csv");
  REQUIRE(!reports.empty());
  char expect[32];
  std::snprintf(expect, sizeof(expect), "%.4f", reports[0].average_accuracy);
  CHECK(rep.output.find(expect) != std::string::npos);
}

TEST_CASE("cli: report exits 1 on a truncated metrics file") {
  fs::remove_all("/tmp/trips_cli_runs/trunc");
  const fs::path cfg = write_config(tiny_config("trunc"), "trips_cli_trunc.ini");
  REQUIRE(run_cmd("run --config " + cfg.string()).exit_code == 0);
  {
    std::ofstream os("/tmp/trips_cli_runs/trunc/metrics_seed5.csv", std::ios::trunc);
    os << "not,a,metrics,header\n";
  }
  const CmdResult rep = run_cmd("report /tmp/trips_cli_runs/trunc");
  CHECK(rep.exit_code == 1);
  CHECK(rep.output.find("metrics_seed5.csv") != std::string::npos);
}

TEST_CASE("cli: synth writes an importable csv") {
  const CmdResult res =
      run_cmd("synth --out /tmp/trips_cli_synth.csv --set synthetic.classes=4");
  INFO(res.output);
  CHECK(res.exit_code == 0);
  CHECK(fs::exists("/tmp/trips_cli_synth.csv"));
  fs::remove("/tmp/trips_cli_synth.csv");
}
