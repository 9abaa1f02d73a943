// trips — desk-scale DGCIL laboratory.
//
// Subcommands: run (full leave-one-domain-out experiment), gradcheck
// (finite-difference audit of every loss), samplecheck (pseudo-sampler
// moments), report (tables from a finished run directory), synth (write a
// synthetic dataset CSV).

#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trips/runner.hpp"
#include "trips/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"TRIPS: domain-generalized class-incremental learning at desk scale"};
  app.set_version_flag("--version", trips::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  CLI::App* run = app.add_subcommand("run", "execute a full experiment");
  run->add_option("-c,--config", config_path, "experiment config (ini)");
  run->add_option("--set", overrides, "override config keys (section.key=value)");

  int gc_instances = 20;
  std::uint64_t gc_seed = 7;
  std::string gc_corrupt;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--instances", gc_instances, "random instances per loss");
  gradcheck->add_option("--seed", gc_seed, "rng seed");
  gradcheck->add_option("--corrupt", gc_corrupt,
                        "test hook: corrupt the named loss's analytic gradient");

  int sc_dim = 4;
  long sc_draws = 100000;
  std::uint64_t sc_seed = 7;
  CLI::App* samplecheck = app.add_subcommand("samplecheck", "pseudo-sampler moment check");
  samplecheck->add_option("--dim", sc_dim, "target dimension");
  samplecheck->add_option("--draws", sc_draws, "number of draws (>= 10000)");
  samplecheck->add_option("--seed", sc_seed, "rng seed");

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "print tables from a run directory");
  report->add_option("dir", report_dir, "run directory")->required();

  std::string synth_out = "synthetic.csv";
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset CSV");
  synth->add_option("-c,--config", config_path, "experiment config (ini)");
  synth->add_option("--set", overrides, "override config keys (section.key=value)");
  synth->add_option("-o,--out", synth_out, "output csv path");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return trips::runner::cmd_run(config_path, overrides);
  if (gradcheck->parsed()) return trips::runner::cmd_gradcheck(gc_instances, gc_seed, gc_corrupt);
  if (samplecheck->parsed()) return trips::runner::cmd_samplecheck(sc_dim, sc_draws, sc_seed);
  if (report->parsed()) return trips::runner::cmd_report(report_dir);
  if (synth->parsed()) return trips::runner::cmd_synth(config_path, overrides, synth_out);
  return 1;
}
