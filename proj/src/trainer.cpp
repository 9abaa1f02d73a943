#include "trips/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace trips::trainer {

using linalg::Matrix;
using linalg::Vector;

const char* optimizer_name(OptimizerRule r) {
  switch (r) {
    case OptimizerRule::sgd: return "sgd";
    case OptimizerRule::momentum: return "momentum";
    case OptimizerRule::adam: return "adam";
  }
  return "adam";
}

OptimizerRule optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerRule::sgd;
  if (name == "momentum") return OptimizerRule::momentum;
  if (name == "adam") return OptimizerRule::adam;
  throw ConfigError("unknown optimizer rule: " + name);
}

void Optimizer::step(const std::vector<net::Tensor*>& params, const net::GradientTape& grads) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, mu = 0.9;
  ++t_;
  for (net::Tensor* p : params) {
    const Matrix& g = grads.grad(*p);
    Matrix& theta = p->value();
    if (!linalg::same_shape(g, theta)) throw ShapeError("optimizer: gradient shape mismatch");
    switch (rule_) {
      case OptimizerRule::sgd: {
        for (int i = 0; i < theta.rows(); ++i)
          for (int j = 0; j < theta.cols(); ++j) theta(i, j) -= lr_ * g(i, j);
        break;
      }
      case OptimizerRule::momentum: {
        Slot& s = state_[p->id()];
        if (s.m.rows() == 0) s.m = Matrix(theta.rows(), theta.cols());
        for (int i = 0; i < theta.rows(); ++i)
          for (int j = 0; j < theta.cols(); ++j) {
            s.m(i, j) = mu * s.m(i, j) + g(i, j);
            theta(i, j) -= lr_ * s.m(i, j);
          }
        break;
      }
      case OptimizerRule::adam: {
        Slot& s = state_[p->id()];
        if (s.m.rows() == 0) {
          s.m = Matrix(theta.rows(), theta.cols());
          s.v = Matrix(theta.rows(), theta.cols());
        }
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (int i = 0; i < theta.rows(); ++i)
          for (int j = 0; j < theta.cols(); ++j) {
            s.m(i, j) = beta1 * s.m(i, j) + (1.0 - beta1) * g(i, j);
            s.v(i, j) = beta2 * s.v(i, j) + (1.0 - beta2) * g(i, j) * g(i, j);
            const double mhat = s.m(i, j) / bc1;
            const double vhat = s.v(i, j) / bc2;
            theta(i, j) -= lr_ * mhat / (std::sqrt(vhat) + eps);
          }
        break;
      }
    }
  }
}

void optimizer_step(const std::vector<net::Tensor*>& params, const net::GradientTape& grads,
                    OptimizerRule rule, double lr) {
  Optimizer opt(rule, lr);
  opt.step(params, grads);
}

int select_model(const std::vector<double>& scores) {
  if (scores.empty()) throw NoCheckpoints("select_model: no checkpoints");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

double validation_score(const net::FeatureExtractor& model, const net::ClassifierHead& head,
                        const stream::Scenario& scenario, const stream::SplitPair& split,
                        const std::vector<int>& class_set) {
  const stream::Dataset& data = *scenario.data;
  std::vector<int> indices;
  for (int idx : split.validation) {
    const int y = data.samples[idx].y;
    if (std::binary_search(class_set.begin(), class_set.end(), y)) indices.push_back(idx);
  }
  if (indices.empty()) throw EmptyEvaluation("validation_score: empty validation set");

  Matrix inputs(static_cast<int>(indices.size()), data.input_dim);
  for (std::size_t i = 0; i < indices.size(); ++i)
    inputs.set_row(static_cast<int>(i), data.samples[indices[i]].x);
  const Matrix feats = model.eval_features(inputs);
  const Matrix logits = head.logits(feats, class_set);

  // per (domain, class) tallies
  std::map<int, std::map<int, std::pair<int, int>>> tally;  // domain -> class -> (correct, total)
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits(static_cast<int>(i), j) > logits(static_cast<int>(i), best)) best = j;
    const int pred = class_set[best];
    const auto& s = data.samples[indices[i]];
    auto& cell = tally[s.z][s.y];
    ++cell.second;
    if (pred == s.y) ++cell.first;
  }

  double score = 0.0;
  int domains = 0;
  for (const auto& [z, per_class] : tally) {
    double macro = 0.0;
    int n = 0;
    for (const auto& [c, cell] : per_class) {
      if (cell.second == 0) continue;
      macro += static_cast<double>(cell.first) / cell.second;
      ++n;
    }
    if (n == 0) continue;
    score += macro / n;
    ++domains;
  }
  if (domains == 0) throw EmptyEvaluation("validation_score: no scorable domain");
  return score / domains;
}

namespace {

constexpr std::uint64_t kInitSalt = 0x1217;
constexpr std::uint64_t kTrainSalt = 0x7124;

std::vector<net::Tensor*> all_parameters(net::FeatureExtractor& model, net::ClassifierHead& head) {
  std::vector<net::Tensor*> params = model.parameters();
  const std::vector<net::Tensor*> head_params = head.parameters();
  params.insert(params.end(), head_params.begin(), head_params.end());
  return params;
}

// Per-class eval-mode features of the step's training pool, used for
// prototype initialization.
std::map<int, std::vector<Vector>> step_features_by_class(const net::ModelSnapshot& model,
                                                          const stream::Scenario& scenario,
                                                          const stream::SplitPair& split,
                                                          int step) {
  const stream::Dataset& data = *scenario.data;
  std::vector<int> indices;
  for (const auto& [z, pool] : split.train[step])
    indices.insert(indices.end(), pool.begin(), pool.end());
  std::sort(indices.begin(), indices.end());

  std::map<int, std::vector<Vector>> by_class;
  if (indices.empty()) return by_class;
  Matrix inputs(static_cast<int>(indices.size()), data.input_dim);
  for (std::size_t i = 0; i < indices.size(); ++i)
    inputs.set_row(static_cast<int>(i), data.samples[indices[i]].x);
  const Matrix feats = model.forward_features(inputs);
  for (std::size_t i = 0; i < indices.size(); ++i)
    by_class[data.samples[indices[i]].y].push_back(feats.row(static_cast<int>(i)));
  return by_class;
}

prototypes::PrototypeSet merge_prototypes(prototypes::PrototypeSet a,
                                          prototypes::PrototypeSet b) {
  a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  std::sort(a.begin(), a.end(), [](const auto& x, const auto& y) {
    return x.class_id < y.class_id;
  });
  return a;
}

struct SessionLoop {
  const stream::Scenario& scenario;
  const stream::SplitPair& split;
  const TrainConfig& cfg;
  int step;
  net::FeatureExtractor model;
  net::ClassifierHead head;
  const SessionResult* prev = nullptr;  // null at the base step

  SessionResult run() {
    SessionResult result;
    linalg::Rng rng(linalg::mix_seed(
        {cfg.seed, static_cast<std::uint64_t>(scenario.test_domain),
         static_cast<std::uint64_t>(step), kTrainSalt}));
    Optimizer opt(cfg.rule, cfg.lr);
    std::vector<net::Tensor*> params = all_parameters(model, head);

    const std::vector<int> learnt = scenario.classes_up_to(step);
    const std::vector<int> old_classes = step >= 1 ? scenario.classes_up_to(step - 1)
                                                   : std::vector<int>{};

    prototypes::DriftAccumulator acc;
    if (step >= 1) acc = prototypes::DriftAccumulator::init(prev->protos);

    std::vector<double> scores;
    std::vector<int> score_iters;
    std::vector<net::ModelSnapshot> checkpoints;

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
      stream::BatchCounters bc;
      losses::Batch batch = stream::assemble_batch(scenario, split, step, cfg.per_domain_batch,
                                                   rng, cfg.sample_with_replacement, &bc);
      result.counters.test_domain_samples += bc.test_domain_samples;
      result.counters.old_class_raw_samples += bc.off_step_samples;
      result.counters.replacement_draws += bc.replacement_draws;

      losses::PseudoBatch pseudo;
      Matrix prev_probs;
      if (step >= 1) {
        const Matrix prev_feats = prev->selected.forward_features(batch.inputs);
        prev_probs = linalg::softmax_rows(prev->selected.logits(prev_feats, old_classes));
        const Matrix live_eval = model.eval_features(batch.inputs);
        prototypes::accumulate_batch_drift(acc, live_eval, net::Mode::eval, prev_feats,
                                           net::Mode::eval, prev->protos, cfg.drift);
        if (cfg.pseudo_sampling) {
          const prototypes::PrototypeSet current =
              prototypes::current_prototypes(acc, prev->protos);
          pseudo = prototypes::sample_pseudo(current, batch.size(), rng);
          if (pseudo.size() != batch.size()) ++result.counters.pseudo_size_mismatches;
        }
      }

      net::Graph g;
      net::Var x = g.input(batch.inputs);
      net::Var feats = model.forward(g, x, net::Mode::train);
      const losses::PairMasks masks = losses::pair_masks(batch);

      losses::LossParts parts;
      parts.classification = losses::classification_loss(g, head, feats, batch.labels, learnt);
      if (step == 0) {
        parts.trips = losses::trips_base(g, feats, masks, cfg.loss.margin);
      } else {
        parts.pseudo = cfg.pseudo_sampling
                           ? losses::pseudo_classification_loss(g, head, pseudo, learnt)
                           : g.scalar(0.0);
        parts.trips = losses::trips_incr(g, feats, masks, pseudo, cfg.loss.margin);
        parts.distillation = losses::distillation_loss(g, feats, head, prev_probs, old_classes);
      }
      net::Var total = losses::total_loss(g, step, parts, cfg.loss);

      TrainCurvePoint pt;
      pt.iteration = iter;
      pt.total = g.scalar_value(total);
      pt.classification = g.scalar_value(*parts.classification);
      pt.trips = g.scalar_value(*parts.trips);
      if (parts.pseudo) pt.pseudo = g.scalar_value(*parts.pseudo);
      if (parts.distillation) pt.distillation = g.scalar_value(*parts.distillation);
      const double recomposed =
          pt.classification + pt.pseudo + cfg.loss.lambda * pt.trips +
          (step >= 1 ? cfg.loss.lambda_prime * pt.distillation : 0.0);
      if (std::abs(pt.total - recomposed) > 1e-10) ++result.counters.wiring_violations;

      net::GradientTape tape = g.backward(total, params);
      opt.step(params, tape);

      if (iter % cfg.validation_period == 0 || iter == cfg.max_iters) {
        if (score_iters.empty() || score_iters.back() != iter) {
          const double score = validation_score(model, head, scenario, split, learnt);
          scores.push_back(score);
          score_iters.push_back(iter);
          checkpoints.push_back(net::clone_freeze(model, head, step));
          pt.val_score = score;
        }
      }
      result.curve.push_back(pt);
    }

    const int best = select_model(scores);
    result.selected = checkpoints[best];
    result.selected_iteration = score_iters[best];
    result.selected_score = scores[best];
    result.checkpoint_iterations = score_iters;
    result.checkpoint_scores = scores;
    if (cfg.keep_checkpoints) result.checkpoints = std::move(checkpoints);

    // Prototypes for this session: drift-updated old classes plus fresh
    // estimates for the new ones from the selected model's features.
    prototypes::PrototypeSet new_protos = prototypes::init_prototypes(
        step_features_by_class(result.selected, scenario, split, step), cfg.drift.alpha, step);
    if (step >= 1) {
      prototypes::PrototypeSet drifted = prototypes::finalize_drift(acc, prev->protos);
      result.protos = merge_prototypes(std::move(drifted), std::move(new_protos));
    } else {
      result.protos = std::move(new_protos);
    }
    return result;
  }
};

}  // namespace

SessionResult run_base_session(const stream::Scenario& scenario, const stream::SplitPair& split,
                               const TrainConfig& cfg) {
  if (scenario.n_steps() < 1) throw DomainError("run_base_session: scenario has no steps");
  linalg::Rng init_rng(linalg::mix_seed(
      {cfg.seed, static_cast<std::uint64_t>(scenario.test_domain), 0, kInitSalt}));
  net::FeatureExtractorConfig arch = cfg.arch;
  arch.input_dim = scenario.data->input_dim;

  SessionLoop loop{scenario, split, cfg, /*step=*/0,
                   net::FeatureExtractor::build(arch, init_rng),
                   net::ClassifierHead(arch.feature_dim)};
  net::expand_head(loop.head, scenario.class_steps[0], init_rng);
  return loop.run();
}

SessionResult run_incremental_session(const SessionResult& prev, const stream::Scenario& scenario,
                                      const stream::SplitPair& split, int step,
                                      const TrainConfig& cfg) {
  if (step < 1 || step >= scenario.n_steps())
    throw DomainError("run_incremental_session: bad step index");
  linalg::Rng init_rng(linalg::mix_seed(
      {cfg.seed, static_cast<std::uint64_t>(scenario.test_domain),
       static_cast<std::uint64_t>(step), kInitSalt}));

  SessionLoop loop{scenario, split, cfg, step, prev.selected.extractor, prev.selected.head};
  loop.prev = &prev;
  net::expand_head(loop.head, scenario.class_steps[step], init_rng);
  return loop.run();
}

}  // namespace trips::trainer
