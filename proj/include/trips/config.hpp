#ifndef TRIPS_CONFIG_HPP_
#define TRIPS_CONFIG_HPP_

#include <string>
#include <vector>

#include "trips/stream.hpp"
#include "trips/trainer.hpp"

// Flat structured-text experiment configuration. Every field has a default;
// unknown sections or keys are rejected; parse -> serialize -> parse is the
// identity.
namespace trips::config {

struct ScenarioConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::string csv_path;
  int steps = 2;            // incremental steps T
  int classes_per_step = 2;
  std::string test_domains = "all";  // "all" or comma-separated domain names
  std::vector<std::uint64_t> seeds = {1};
  double split_ratio = 0.8;
};

struct EvalConfig {
  std::string protocol = "end_of_step";  // end_of_step | checkpoint_mean
  bool micro_average = false;
};

struct OutputConfig {
  std::string dir = "runs";
  std::string name;  // empty: derived from the config fingerprint
  bool write_checkpoints = true;
  bool write_curves = true;
  int workers = 0;  // 0: one per rotation
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  stream::SyntheticConfig synthetic;
  trainer::TrainConfig train;  // loss/drift filled from [losses]/[drift]
  EvalConfig eval;
  OutputConfig output;
};

ExperimentConfig defaults();

ExperimentConfig parse_string(const std::string& text);
ExperimentConfig parse_file(const std::string& path);
std::string serialize(const ExperimentConfig& cfg);

// "section.key=value" or ("section.key", "value")
void apply_override(ExperimentConfig& cfg, const std::string& dotted_key,
                    const std::string& value);
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::uint64_t fingerprint(const ExperimentConfig& cfg);

}  // namespace trips::config

#endif  // TRIPS_CONFIG_HPP_
