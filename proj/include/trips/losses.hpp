#ifndef TRIPS_LOSSES_HPP_
#define TRIPS_LOSSES_HPP_

#include <optional>
#include <vector>

#include "trips/net.hpp"

// Training objectives: per-step classification, old-class distillation,
// the domain-suppressing triplet losses, and pseudo-feature terms.
namespace trips::losses {

using linalg::Matrix;
using net::Graph;
using net::Var;

struct Batch {
  Matrix inputs;             // n x input_dim
  std::vector<int> labels;   // class ids
  std::vector<int> domains;  // domain ids
  int size() const { return inputs.rows(); }
};

struct PseudoBatch {
  Matrix feats;             // s x d, feature-space samples (constants)
  std::vector<int> labels;  // class ids restricted to old classes
  int size() const { return feats.rows(); }
};

// gamma_plus: same class, different domain. gamma_minus: different class,
// same domain. Symmetric, zero diagonal, mutually exclusive.
struct PairMasks {
  std::vector<std::vector<bool>> gamma_plus;
  std::vector<std::vector<bool>> gamma_minus;
};

struct LossConfig {
  double margin = 0.0;
  double lambda = 1.0;
  double lambda_prime = 30.0;
};

PairMasks pair_masks(const std::vector<int>& labels, const std::vector<int>& domains);
PairMasks pair_masks(const Batch& batch);

// Mean NLL of the true class with the softmax denominator over all of
// class_set (the classes learnt so far), even though labels come from the
// current step only.
Var classification_loss(Graph& g, net::ClassifierHead& head, Var feats,
                        const std::vector<int>& labels, const std::vector<int>& class_set);

// Cross-entropy between the frozen previous model's distribution and the
// live model's, both restricted to the old classes. prev_probs rows are the
// snapshot's softmax outputs over old_classes (constants, no gradient).
Var distillation_loss(Graph& g, Var live_feats, net::ClassifierHead& live_head,
                      const Matrix& prev_probs, const std::vector<int>& old_classes);

// Snapshot side of the distillation pair: eval-mode probabilities over the
// old classes for a raw input batch.
Matrix snapshot_distribution(const net::ModelSnapshot& snapshot, const Matrix& inputs,
                             const std::vector<int>& old_classes);

// Convenience evaluation used by tests: runs both forward passes itself.
double distillation_loss_value(const net::ModelSnapshot& snapshot, net::FeatureExtractor& live,
                               net::ClassifierHead& live_head, const Batch& batch,
                               const std::vector<int>& old_classes,
                               net::Mode live_mode = net::Mode::eval);

Var trips_base(Graph& g, Var feats, const PairMasks& masks, double margin);

// As trips_base, but every pseudo-sample is a negative candidate for every
// anchor (old and new class sets are disjoint). Empty pseudo batch reduces
// to trips_base exactly.
Var trips_incr(Graph& g, Var feats, const PairMasks& masks, const PseudoBatch& pseudo,
               double margin);

// Cross-entropy of head logits over class_set against pseudo labels;
// gradients reach head parameters only.
Var pseudo_classification_loss(Graph& g, net::ClassifierHead& head, const PseudoBatch& pseudo,
                               const std::vector<int>& class_set);

struct LossParts {
  std::optional<Var> classification;
  std::optional<Var> pseudo;
  std::optional<Var> trips;  // trips_base at t=0, trips_incr at t>=1
  std::optional<Var> distillation;
};

// t=0: class + lambda * trips. t>=1: class + pseudo + lambda * trips +
// lambda' * dist. Throws MissingTerm when a required part is absent.
Var total_loss(Graph& g, int step, const LossParts& parts, const LossConfig& cfg);

}  // namespace trips::losses

#endif  // TRIPS_LOSSES_HPP_
