#ifndef TRIPS_STREAM_HPP_
#define TRIPS_STREAM_HPP_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trips/losses.hpp"

// Scenario construction, synthetic multi-domain data, CSV ingestion,
// train/validation splitting, and per-domain batch assembly.
namespace trips::stream {

using linalg::Matrix;
using linalg::Vector;

struct LabeledSample {
  Vector x;
  int y = -1;  // class id
  int z = -1;  // domain id
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::vector<std::string> class_names;   // index == class id
  std::vector<std::string> domain_names;  // index == domain id
  int input_dim = 0;

  int n_classes() const { return static_cast<int>(class_names.size()); }
  int n_domains() const { return static_cast<int>(domain_names.size()); }
};

struct SyntheticConfig {
  int n_classes = 8;
  int n_domains = 4;
  int input_dim = 16;
  double center_spread = 3.0;      // scale of latent class centers
  double domain_scale = 0.15;      // per-domain affine perturbation size
  double noise_std = 0.25;
  int samples_per_class_per_domain = 60;
  std::uint64_t seed = 77;
};

// Latent class centers with enforced pairwise spacing >= 4x noise_std; each
// domain applies a fixed invertible affine map plus isotropic noise.
Dataset synth_generate(const SyntheticConfig& cfg);

// Per-domain ground-truth affine map (for test oracles).
struct DomainTransform {
  Matrix linear;  // d x d
  Vector shift;
};
std::vector<DomainTransform> synth_domain_transforms(const SyntheticConfig& cfg);
std::vector<Vector> synth_class_centers(const SyntheticConfig& cfg);

// Header "f0,...,f{d-1},class,domain"; ids assigned lexicographically.
Dataset import_csv(const std::string& path);
void export_csv(const Dataset& data, const std::string& path);

struct Scenario {
  std::shared_ptr<const Dataset> data;
  std::vector<std::vector<int>> class_steps;  // C_0 ... C_T
  std::vector<int> train_domains;
  int test_domain = -1;
  std::uint64_t seed = 0;

  // sample indices: [step][train domain id] -> indices into data->samples
  std::vector<std::map<int, std::vector<int>>> store;
  // test-domain indices per class id
  std::map<int, std::vector<int>> test_store;

  int n_steps() const { return static_cast<int>(class_steps.size()); }
  std::vector<int> classes_up_to(int step) const;  // C_0 u ... u C_step, sorted
};

// Seed-controlled random class order; base step takes every class the
// declared incremental steps do not consume (and must be nonempty).
Scenario build_scenario(std::shared_ptr<const Dataset> data, int n_incremental_steps,
                        int classes_per_step, int test_domain, std::uint64_t seed);

struct SplitPair {
  // [step][train domain id] -> training-portion indices
  std::vector<std::map<int, std::vector<int>>> train;
  // all validation indices across training domains
  std::vector<int> validation;
  bool stratified_everywhere = true;
};

// 80/20 per training domain, stratified per (class, domain) cell when every
// cell of the domain has >= 2 samples; unstratified for that domain
// otherwise.
SplitPair split_train_validation(const Scenario& scenario, double ratio, std::uint64_t seed);

struct BatchCounters {
  long test_domain_samples = 0;
  long off_step_samples = 0;
  long replacement_draws = 0;
};

// per_domain samples from every training domain's step-t pool,
// concatenated. Draws without replacement when the pool is large enough;
// with replacement otherwise if allowed (counted), else ExhaustedDomain.
losses::Batch assemble_batch(const Scenario& scenario, const SplitPair& split, int step,
                             int per_domain, linalg::Rng& rng, bool allow_replacement,
                             BatchCounters* counters = nullptr);

}  // namespace trips::stream

#endif  // TRIPS_STREAM_HPP_
