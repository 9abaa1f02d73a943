#include "trips/losses.hpp"

#include <algorithm>

namespace trips::losses {

PairMasks pair_masks(const std::vector<int>& labels, const std::vector<int>& domains) {
  if (labels.size() != domains.size()) throw ShapeError("pair_masks: label/domain size mismatch");
  const int n = static_cast<int>(labels.size());
  PairMasks m;
  m.gamma_plus.assign(n, std::vector<bool>(n, false));
  m.gamma_minus.assign(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool same_class = labels[i] == labels[j];
      const bool same_domain = domains[i] == domains[j];
      if (same_class && !same_domain) m.gamma_plus[i][j] = true;
      if (!same_class && same_domain) m.gamma_minus[i][j] = true;
    }
  return m;
}

PairMasks pair_masks(const Batch& batch) { return pair_masks(batch.labels, batch.domains); }

namespace {

std::vector<int> label_columns(const std::vector<int>& labels, const std::vector<int>& class_set,
                               const char* who) {
  std::vector<int> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find(class_set.begin(), class_set.end(), labels[i]);
    if (it == class_set.end())
      throw UnknownClass(std::string(who) + ": label " + std::to_string(labels[i]) +
                         " not in the class set");
    cols[i] = static_cast<int>(it - class_set.begin());
  }
  return cols;
}

}  // namespace

Var classification_loss(Graph& g, net::ClassifierHead& head, Var feats,
                        const std::vector<int>& labels, const std::vector<int>& class_set) {
  const std::vector<int> cols = label_columns(labels, class_set, "classification_loss");
  Var logits = head.forward_logits(g, feats, class_set);
  return g.softmax_nll(logits, cols);
}

Var distillation_loss(Graph& g, Var live_feats, net::ClassifierHead& live_head,
                      const Matrix& prev_probs, const std::vector<int>& old_classes) {
  if (old_classes.empty()) throw EmptyOldClassSet("distillation_loss: no old classes");
  if (prev_probs.cols() != static_cast<int>(old_classes.size()))
    throw ShapeError("distillation_loss: prev_probs width != |old classes|");
  Var logits = live_head.forward_logits(g, live_feats, old_classes);
  return g.softmax_xent(logits, prev_probs);
}

Matrix snapshot_distribution(const net::ModelSnapshot& snapshot, const Matrix& inputs,
                             const std::vector<int>& old_classes) {
  if (old_classes.empty()) throw EmptyOldClassSet("snapshot_distribution: no old classes");
  const Matrix feats = snapshot.forward_features(inputs);
  return linalg::softmax_rows(snapshot.logits(feats, old_classes));
}

double distillation_loss_value(const net::ModelSnapshot& snapshot, net::FeatureExtractor& live,
                               net::ClassifierHead& live_head, const Batch& batch,
                               const std::vector<int>& old_classes, net::Mode live_mode) {
  const Matrix prev = snapshot_distribution(snapshot, batch.inputs, old_classes);
  Graph g;
  Var x = g.input(batch.inputs);
  Var feats = live.forward(g, x, live_mode, /*update_running=*/false);
  Var loss = distillation_loss(g, feats, live_head, prev, old_classes);
  return g.scalar_value(loss);
}

Var trips_base(Graph& g, Var feats, const PairMasks& masks, double margin) {
  static const Matrix kNoPseudo;
  return g.hard_triplet_hinge(feats, masks.gamma_plus, masks.gamma_minus, kNoPseudo, margin);
}

Var trips_incr(Graph& g, Var feats, const PairMasks& masks, const PseudoBatch& pseudo,
               double margin) {
  return g.hard_triplet_hinge(feats, masks.gamma_plus, masks.gamma_minus, pseudo.feats, margin);
}

Var pseudo_classification_loss(Graph& g, net::ClassifierHead& head, const PseudoBatch& pseudo,
                               const std::vector<int>& class_set) {
  if (pseudo.size() == 0) throw EmptyPseudoBatch("pseudo_classification_loss: empty pseudo batch");
  const std::vector<int> cols =
      label_columns(pseudo.labels, class_set, "pseudo_classification_loss");
  Var feats = g.input(pseudo.feats);  // constants: gradients stop at the head
  Var logits = head.forward_logits(g, feats, class_set);
  return g.softmax_nll(logits, cols);
}

Var total_loss(Graph& g, int step, const LossParts& parts, const LossConfig& cfg) {
  if (!parts.classification) throw MissingTerm("total_loss: classification term required");
  if (!parts.trips) throw MissingTerm("total_loss: trips term required");
  if (step == 0) {
    return g.add(*parts.classification, g.scale(*parts.trips, cfg.lambda));
  }
  if (!parts.pseudo) throw MissingTerm("total_loss: pseudo term required for t >= 1");
  if (!parts.distillation) throw MissingTerm("total_loss: distillation term required for t >= 1");
  Var acc = g.add(*parts.classification, *parts.pseudo);
  acc = g.add(acc, g.scale(*parts.trips, cfg.lambda));
  acc = g.add(acc, g.scale(*parts.distillation, cfg.lambda_prime));
  return acc;
}

}  // namespace trips::losses
