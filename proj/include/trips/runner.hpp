#ifndef TRIPS_RUNNER_HPP_
#define TRIPS_RUNNER_HPP_

#include <string>
#include <vector>

#include "trips/config.hpp"
#include "trips/eval.hpp"
#include "trips/trainer.hpp"

// Full leave-one-domain-out runs: scenario construction per seed, base plus
// incremental sessions per rotation, end-of-step evaluation, and the run
// directory artifacts (manifest, metrics, curves, checkpoints).
namespace trips::runner {

struct SessionMeta {
  int step = 0;
  int selected_iteration = 0;
  double selected_score = 0.0;
};

struct JobOutcome {
  std::uint64_t seed = 0;
  int test_domain = -1;
  std::vector<eval::StepReport> reports;
  std::vector<SessionMeta> sessions;
  trainer::ProtocolCounters counters;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<JobOutcome> rotations;  // ordered by test domain id
  eval::RotationReport aggregate;
};

struct RunOutcome {
  std::string run_dir;
  std::vector<SeedOutcome> seeds;
  trainer::ProtocolCounters counters;  // summed over jobs
};

RunOutcome execute_run(const config::ExperimentConfig& cfg);

// Subcommand entry points; exit codes per the CLI contract.
int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides);
int cmd_gradcheck(int instances, std::uint64_t seed, const std::string& corrupt);
int cmd_samplecheck(int dim, long draws, std::uint64_t seed);
int cmd_report(const std::string& run_dir);
int cmd_synth(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_csv);

}  // namespace trips::runner

#endif  // TRIPS_RUNNER_HPP_
