#ifndef TRIPS_TRAINER_HPP_
#define TRIPS_TRAINER_HPP_

#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "trips/eval.hpp"
#include "trips/losses.hpp"
#include "trips/net.hpp"
#include "trips/prototypes.hpp"
#include "trips/stream.hpp"

// Session orchestration: cloning/freezing, head expansion, loss composition,
// drift accumulation, pseudo-sampling with |S| = |B|, optimization, and
// training-domain validation model selection.
namespace trips::trainer {

enum class OptimizerRule { sgd, momentum, adam };

const char* optimizer_name(OptimizerRule r);
OptimizerRule optimizer_from_name(const std::string& name);

struct TrainConfig {
  double lr = 5e-5;              // paper-scale default
  int max_iters = 500;           // 5000 at paper scale
  int per_domain_batch = 8;      // 32 at paper scale
  OptimizerRule rule = OptimizerRule::adam;
  losses::LossConfig loss;
  prototypes::DriftConfig drift;
  int validation_period = 50;
  std::uint64_t seed = 1;
  bool pseudo_sampling = true;
  bool sample_with_replacement = true;
  bool keep_checkpoints = false;  // retain all periodic snapshots in the result
  net::FeatureExtractorConfig arch;
};

struct TrainCurvePoint {
  int iteration = 0;
  double total = 0.0;
  double classification = 0.0;
  double pseudo = 0.0;
  double trips = 0.0;
  double distillation = 0.0;
  double val_score = std::numeric_limits<double>::quiet_NaN();  // set at validation points
};

struct ProtocolCounters {
  long pseudo_size_mismatches = 0;   // iterations where |S| != |B|
  long test_domain_samples = 0;      // test-domain samples seen in training
  long old_class_raw_samples = 0;    // raw samples outside the current step
  long replacement_draws = 0;
  long wiring_violations = 0;        // optimizer loss != recomposed loss parts
};

struct SessionResult {
  net::ModelSnapshot selected;
  prototypes::PrototypeSet protos;
  std::vector<TrainCurvePoint> curve;
  int selected_iteration = 0;
  double selected_score = 0.0;
  ProtocolCounters counters;
  std::vector<net::ModelSnapshot> checkpoints;  // populated when keep_checkpoints
  std::vector<int> checkpoint_iterations;
  std::vector<double> checkpoint_scores;
};

class Optimizer {
 public:
  Optimizer(OptimizerRule rule, double lr) : rule_(rule), lr_(lr) {}
  void step(const std::vector<net::Tensor*>& params, const net::GradientTape& grads);

 private:
  struct Slot {
    linalg::Matrix m;  // first moment / momentum buffer
    linalg::Matrix v;  // second moment (adam)
  };
  OptimizerRule rule_;
  double lr_;
  long t_ = 0;
  std::unordered_map<std::int64_t, Slot> state_;
};

// One-off step with the given rule (fresh state); the plain rule is exactly
// theta <- theta - lr * g.
void optimizer_step(const std::vector<net::Tensor*>& params, const net::GradientTape& grads,
                    OptimizerRule rule, double lr);

// Argmax of validation scores, earliest iteration on ties.
int select_model(const std::vector<double>& scores);

// Domain-wise class-wise accuracy on the overall validation set restricted
// to class_set: per training domain, macro accuracy over its classes, then
// the mean across domains.
double validation_score(const net::FeatureExtractor& model, const net::ClassifierHead& head,
                        const stream::Scenario& scenario, const stream::SplitPair& split,
                        const std::vector<int>& class_set);

SessionResult run_base_session(const stream::Scenario& scenario, const stream::SplitPair& split,
                               const TrainConfig& cfg);

SessionResult run_incremental_session(const SessionResult& prev, const stream::Scenario& scenario,
                                      const stream::SplitPair& split, int step,
                                      const TrainConfig& cfg);

}  // namespace trips::trainer

#endif  // TRIPS_TRAINER_HPP_
