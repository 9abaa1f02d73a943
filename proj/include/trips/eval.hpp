#ifndef TRIPS_EVAL_HPP_
#define TRIPS_EVAL_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trips/net.hpp"
#include "trips/stream.hpp"

// DGCIL metrics and the end-of-step evaluation protocol over the held-out
// test domain, aggregated across test-domain rotations.
namespace trips::eval {

struct StepReport {
  int step = 0;
  int test_domain = -1;
  double average_accuracy = 0.0;           // macro over classes learnt so far
  std::optional<double> harmonic;          // undefined at the base step
  double old_accuracy = 0.0;
  double new_accuracy = 0.0;
  double micro_accuracy = 0.0;             // diagnostic
  int n_classes = 0;                       // classes entering the macro average
  std::map<int, double> per_class;
  std::map<int, int> per_class_count;
  std::vector<int> excluded_classes;       // no test samples
};

// Macro (class-wise) mean of per-class accuracies; classes absent from the
// labels are excluded. Throws EmptyEvaluation when nothing can be scored.
double average_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                        const std::vector<int>& class_universe);

// 2ab/(a+b) with the 0/0 -> 0 convention.
double harmonic_accuracy(double old_acc, double new_acc);

// End-of-step protocol: test-domain samples of all classes learnt so far,
// eval-mode features, argmax over the learnt-class logits.
StepReport evaluate_step(const net::ModelSnapshot& model, const stream::Scenario& scenario,
                         int step);

// Comparison mode: metrics averaged over a session's periodic checkpoints
// instead of the selected final model (the bias the end-of-step protocol
// avoids).
StepReport evaluate_step_checkpoint_mean(const std::vector<net::ModelSnapshot>& checkpoints,
                                         const stream::Scenario& scenario, int step);

struct RotationReport {
  // one StepReport sequence per rotation, keyed by test domain
  std::map<int, std::vector<StepReport>> by_domain;
  std::vector<double> per_step_mean_avg;                  // cross-domain mean per step
  std::vector<std::optional<double>> per_step_mean_harm;  // undefined at step 0
  std::map<int, double> per_domain_overall_avg;           // mean over steps
  std::map<int, std::optional<double>> per_domain_overall_harm;
};

RotationReport aggregate_rotations(const std::vector<std::vector<StepReport>>& rotations);

// CSV schema: step,test_domain,avg_acc,harm_acc,n_classes (harm_acc is
// "nan" at the base step). Values are written round-trip exact.
void write_metrics_csv(const std::string& path, const std::vector<StepReport>& reports);
std::vector<StepReport> read_metrics_csv(const std::string& path);

}  // namespace trips::eval

#endif  // TRIPS_EVAL_HPP_
