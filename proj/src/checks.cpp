#include "trips/checks.hpp"

#include <algorithm>
#include <cmath>

#include "trips/prototypes.hpp"

namespace trips::checks {

using linalg::Matrix;
using linalg::Vector;

namespace {

struct Instance {
  net::FeatureExtractor model;
  net::ClassifierHead head;
  net::ModelSnapshot snapshot;
  losses::Batch batch;
  losses::PseudoBatch pseudo;
  std::vector<int> all_classes;  // C'
  std::vector<int> old_classes;  // C''
  std::vector<int> new_classes;  // C_t
  Matrix prev_probs;             // snapshot distribution over C'' (constant)
  losses::LossConfig loss_cfg;
};

Instance make_instance(linalg::Rng& rng) {
  Instance inst;
  const int n = rng.uniform_int(4, 8);
  const int in_dim = rng.uniform_int(2, 4);
  const int hidden = rng.uniform_int(3, 6);
  const int d = rng.uniform_int(2, 6);
  const int n_classes = rng.uniform_int(3, 5);
  const int n_old = rng.uniform_int(1, n_classes - 1);

  net::FeatureExtractorConfig arch;
  arch.input_dim = in_dim;
  arch.hidden = {hidden};
  arch.feature_dim = d;
  arch.feature_batchnorm = true;
  inst.model = net::FeatureExtractor::build(arch, rng);

  for (int c = 0; c < n_classes; ++c) inst.all_classes.push_back(c);
  inst.old_classes.assign(inst.all_classes.begin(), inst.all_classes.begin() + n_old);
  inst.new_classes.assign(inst.all_classes.begin() + n_old, inst.all_classes.end());

  inst.head = net::ClassifierHead(d);
  net::expand_head(inst.head, inst.all_classes, rng, net::HeadInit::gaussian, 0.5);

  net::FeatureExtractor prev_model = net::FeatureExtractor::build(arch, rng);
  net::ClassifierHead prev_head(d);
  net::expand_head(prev_head, inst.old_classes, rng, net::HeadInit::gaussian, 0.5);
  inst.snapshot = net::clone_freeze(prev_model, prev_head, 0);

  inst.batch.inputs = Matrix(n, in_dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < in_dim; ++j) inst.batch.inputs(i, j) = rng.normal();
  inst.batch.labels.resize(n);
  inst.batch.domains.resize(n);
  for (int i = 0; i < n; ++i) {
    inst.batch.labels[i] =
        inst.new_classes[rng.uniform_int(0, static_cast<int>(inst.new_classes.size()) - 1)];
    inst.batch.domains[i] = rng.uniform_int(0, 2);
  }

  const int s = rng.uniform_int(1, n);
  inst.pseudo.feats = Matrix(s, d);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < d; ++j) inst.pseudo.feats(i, j) = rng.normal();
  inst.pseudo.labels.resize(s);
  for (int i = 0; i < s; ++i)
    inst.pseudo.labels[i] =
        inst.old_classes[rng.uniform_int(0, static_cast<int>(inst.old_classes.size()) - 1)];

  inst.prev_probs = losses::snapshot_distribution(inst.snapshot, inst.batch.inputs,
                                                  inst.old_classes);
  return inst;
}

// Forward value of the named loss; train-mode features with frozen running
// stats, so repeated evaluations are side-effect free.
double eval_loss(Instance& inst, const std::string& name) {
  net::Graph g;
  net::Var x = g.input(inst.batch.inputs);
  net::Var feats = inst.model.forward(g, x, net::Mode::train, /*update_running=*/false);
  const losses::PairMasks masks = losses::pair_masks(inst.batch);
  net::Var loss;
  if (name == "classification") {
    loss = losses::classification_loss(g, inst.head, feats, inst.batch.labels, inst.all_classes);
  } else if (name == "distillation") {
    loss = losses::distillation_loss(g, feats, inst.head, inst.prev_probs, inst.old_classes);
  } else if (name == "trips_base") {
    loss = losses::trips_base(g, feats, masks, inst.loss_cfg.margin);
  } else if (name == "pseudo") {
    loss = losses::pseudo_classification_loss(g, inst.head, inst.pseudo, inst.all_classes);
  } else if (name == "trips_incr") {
    loss = losses::trips_incr(g, feats, masks, inst.pseudo, inst.loss_cfg.margin);
  } else if (name == "total") {
    losses::LossParts parts;
    parts.classification =
        losses::classification_loss(g, inst.head, feats, inst.batch.labels, inst.all_classes);
    parts.pseudo = losses::pseudo_classification_loss(g, inst.head, inst.pseudo,
                                                      inst.all_classes);
    parts.trips = losses::trips_incr(g, feats, masks, inst.pseudo, inst.loss_cfg.margin);
    parts.distillation =
        losses::distillation_loss(g, feats, inst.head, inst.prev_probs, inst.old_classes);
    loss = losses::total_loss(g, 1, parts, inst.loss_cfg);
  } else {
    throw DomainError("gradcheck: unknown loss " + name);
  }
  return g.scalar_value(loss);
}

net::GradientTape analytic_grad(Instance& inst, const std::string& name,
                                const std::vector<net::Tensor*>& params) {
  net::Graph g;
  net::Var x = g.input(inst.batch.inputs);
  net::Var feats = inst.model.forward(g, x, net::Mode::train, /*update_running=*/false);
  const losses::PairMasks masks = losses::pair_masks(inst.batch);
  net::Var loss;
  if (name == "classification") {
    loss = losses::classification_loss(g, inst.head, feats, inst.batch.labels, inst.all_classes);
  } else if (name == "distillation") {
    loss = losses::distillation_loss(g, feats, inst.head, inst.prev_probs, inst.old_classes);
  } else if (name == "trips_base") {
    loss = losses::trips_base(g, feats, masks, inst.loss_cfg.margin);
  } else if (name == "pseudo") {
    loss = losses::pseudo_classification_loss(g, inst.head, inst.pseudo, inst.all_classes);
  } else if (name == "trips_incr") {
    loss = losses::trips_incr(g, feats, masks, inst.pseudo, inst.loss_cfg.margin);
  } else {
    losses::LossParts parts;
    parts.classification =
        losses::classification_loss(g, inst.head, feats, inst.batch.labels, inst.all_classes);
    parts.pseudo = losses::pseudo_classification_loss(g, inst.head, inst.pseudo,
                                                      inst.all_classes);
    parts.trips = losses::trips_incr(g, feats, masks, inst.pseudo, inst.loss_cfg.margin);
    parts.distillation =
        losses::distillation_loss(g, feats, inst.head, inst.prev_probs, inst.old_classes);
    loss = losses::total_loss(g, 1, parts, inst.loss_cfg);
  }
  return g.backward(loss, params);
}

}  // namespace

GradCheckResult run_gradcheck(int instances, std::uint64_t seed, const std::string& corrupt_loss) {
  constexpr double h = 1e-5;
  GradCheckResult result;
  result.pass = true;
  linalg::Rng rng(linalg::mix_seed({seed, 0x62ADC11Cull}));

  for (const std::string& name : gradcheck_loss_names()) {
    GradCheckResult::PerLoss per;
    per.name = name;
    for (int k = 0; k < instances; ++k) {
      Instance inst = make_instance(rng);
      std::vector<net::Tensor*> params = inst.model.parameters();
      const std::vector<net::Tensor*> head_params = inst.head.parameters();
      params.insert(params.end(), head_params.begin(), head_params.end());

      net::GradientTape tape = analytic_grad(inst, name, params);
      bool corrupted = (name == corrupt_loss);
      for (net::Tensor* p : params) {
        Matrix& g = tape.grad(*p);
        if (corrupted) {
          g(0, 0) += 1e-2;  // negative-control hook
          corrupted = false;
        }
        Matrix& theta = p->value();
        for (int i = 0; i < theta.rows(); ++i)
          for (int j = 0; j < theta.cols(); ++j) {
            const double saved = theta(i, j);
            theta(i, j) = saved + h;
            const double up = eval_loss(inst, name);
            theta(i, j) = saved - h;
            const double down = eval_loss(inst, name);
            theta(i, j) = saved;
            const double fd = (up - down) / (2.0 * h);
            const double a = g(i, j);
            const double rel =
                std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            ++per.coords_checked;
            if (rel > per.max_rel_err) {
              per.max_rel_err = rel;
              per.worst_location = "instance " + std::to_string(k) + " param " +
                                   std::to_string(p->id()) + " [" + std::to_string(i) + "," +
                                   std::to_string(j) + "]";
            }
          }
      }
    }
    if (per.max_rel_err >= result.threshold) result.pass = false;
    result.per_loss.push_back(std::move(per));
  }
  return result;
}

SampleCheckResult run_samplecheck(int dim, long draws, std::uint64_t seed) {
  if (dim < 1) throw DomainError("samplecheck: dim must be >= 1");
  if (draws < 10000) throw DomainError("samplecheck: need at least 10^4 draws");
  SampleCheckResult res;
  res.dim = dim;
  res.draws = draws;
  res.mean_tol = 0.02 * std::sqrt(static_cast<double>(dim));

  linalg::Rng rng(linalg::mix_seed({seed, 0x5A3CCull}));
  Matrix m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = 0.5 * rng.normal();
  linalg::SymMatrix target(dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= i; ++j) {
      double acc = i == j ? 0.5 : 0.0;
      for (int k = 0; k < dim; ++k) acc += m(k, i) * m(k, j);
      target.set(i, j, acc);
    }
  Vector mu(dim);
  for (double& x : mu) x = rng.normal();

  prototypes::GaussianPrototype proto;
  proto.class_id = 0;
  proto.mu = mu;
  proto.set_sigma(target);
  prototypes::PrototypeSet protos;
  protos.push_back(std::move(proto));

  Vector mean(dim, 0.0);
  linalg::SymMatrix second(dim);  // sum of x x^T
  constexpr int kChunk = 4096;
  long remaining = draws;
  while (remaining > 0) {
    const int take = static_cast<int>(std::min<long>(kChunk, remaining));
    const losses::PseudoBatch s = prototypes::sample_pseudo(protos, take, rng);
    for (int i = 0; i < take; ++i) {
      for (int a = 0; a < dim; ++a) {
        mean[a] += s.feats(i, a);
        for (int b = 0; b <= a; ++b) second.add_at(a, b, s.feats(i, a) * s.feats(i, b));
      }
    }
    remaining -= take;
  }
  const double n = static_cast<double>(draws);
  for (double& x : mean) x /= n;
  linalg::SymMatrix cov(dim);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b <= a; ++b) cov.set(a, b, second.at(a, b) / n - mean[a] * mean[b]);

  res.mean_err_norm = std::sqrt(linalg::norm_sq(linalg::vsub(mean, mu)));
  res.cov_rel_err = linalg::sym_frobenius_diff(cov, target) / linalg::sym_frobenius(target);
  res.pass = res.mean_err_norm < res.mean_tol && res.cov_rel_err < res.cov_tol;
  return res;
}

}  // namespace trips::checks
