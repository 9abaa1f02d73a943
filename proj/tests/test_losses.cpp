#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "test_support.hpp"
#include "trips/losses.hpp"

using namespace trips;
using linalg::Matrix;
using linalg::Vector;

namespace {

net::ClassifierHead random_head(int d, const std::vector<int>& classes, linalg::Rng& rng,
                                double std_dev = 0.6) {
  net::ClassifierHead head(d);
  net::expand_head(head, classes, rng, net::HeadInit::gaussian, std_dev);
  for (int c : classes) head.row(c).bias.value()(0, 0) = rng.normal() * 0.3;
  return head;
}

Matrix random_matrix(int r, int c, linalg::Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

double dist_sq(const Matrix& a, int i, const Matrix& b, int j) {
  double acc = 0;
  for (int k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    acc += d * d;
  }
  return acc;
}

// brute-force hard-mined triplet loss over explicit candidate sets
double brute_force_trips(const Matrix& f, const losses::PairMasks& m, const Matrix& pseudo,
                         double margin) {
  const int n = f.rows();
  double total = 0;
  int valid = 0;
  for (int i = 0; i < n; ++i) {
    double hp = -1;
    bool has_pos = false;
    for (int j = 0; j < n; ++j)
      if (j != i && m.gamma_plus[i][j]) {
        has_pos = true;
        hp = std::max(hp, dist_sq(f, i, f, j));
      }
    if (!has_pos) continue;
    double hn = 0;
    bool has_neg = false;
    for (int j = 0; j < n; ++j)
      if (j != i && m.gamma_minus[i][j]) {
        const double d = dist_sq(f, i, f, j);
        hn = has_neg ? std::min(hn, d) : d;
        has_neg = true;
      }
    for (int k = 0; k < pseudo.rows(); ++k) {
      const double d = dist_sq(f, i, pseudo, k);
      hn = has_neg ? std::min(hn, d) : d;
      has_neg = true;
    }
    if (!has_neg) continue;
    ++valid;
    total += std::max(hp - hn + margin, 0.0);
  }
  return valid ? total / valid : 0.0;
}

double graph_loss_value(const std::function<net::Var(net::Graph&)>& build) {
  net::Graph g;
  return g.scalar_value(build(g));
}

}  // namespace

TEST_CASE("pair_masks: definition cases") {
  {
    const losses::PairMasks m = losses::pair_masks({3, 3}, {0, 1});
    CHECK(m.gamma_plus[0][1]);
    CHECK(m.gamma_plus[1][0]);
    CHECK_FALSE(m.gamma_minus[0][1]);
  }
  {
    // same class, same domain: the definitions leave the pair unlabeled
    const losses::PairMasks m = losses::pair_masks({3, 3}, {0, 0});
    CHECK_FALSE(m.gamma_plus[0][1]);
    CHECK_FALSE(m.gamma_minus[0][1]);
  }
  {
    const losses::PairMasks m = losses::pair_masks({3, 4}, {0, 0});
    CHECK(m.gamma_minus[0][1]);
    CHECK_FALSE(m.gamma_plus[0][1]);
  }
}

TEST_CASE("pair_masks: brute-force double loop on random batches") {
  linalg::Rng rng(100);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(2, 12);
    std::vector<int> labels(n), domains(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = rng.uniform_int(0, 2);
      domains[i] = rng.uniform_int(0, 2);
    }
    const losses::PairMasks m = losses::pair_masks(labels, domains);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const bool plus = i != j && labels[i] == labels[j] && domains[i] != domains[j];
        const bool minus = i != j && labels[i] != labels[j] && domains[i] == domains[j];
        CHECK(m.gamma_plus[i][j] == plus);
        CHECK(m.gamma_minus[i][j] == minus);
      }
  }
}

TEST_CASE("pair_masks: symmetry, zero diagonal, exclusivity (property)") {
  linalg::Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(1, 12);
    std::vector<int> labels(n), domains(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = rng.uniform_int(0, 3);
      domains[i] = rng.uniform_int(0, 3);
    }
    const losses::PairMasks m = losses::pair_masks(labels, domains);
    for (int i = 0; i < n; ++i) {
      CHECK_FALSE(m.gamma_plus[i][i]);
      CHECK_FALSE(m.gamma_minus[i][i]);
      for (int j = 0; j < n; ++j) {
        const bool both = m.gamma_plus[i][j] && m.gamma_minus[i][j];
        CHECK(m.gamma_plus[i][j] == m.gamma_plus[j][i]);
        CHECK(m.gamma_minus[i][j] == m.gamma_minus[j][i]);
        CHECK_FALSE(both);
      }
    }
  }
}

TEST_CASE("classification_loss: two equal logits give ln 2") {
  linalg::Rng rng(102);
  net::ClassifierHead head(2);
  net::expand_head(head, {0, 1}, rng, net::HeadInit::zero);
  const double loss = graph_loss_value([&](net::Graph& g) {
    return losses::classification_loss(g, head, g.input(Matrix(1, 2, 0.4)), {0}, {0, 1});
  });
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("classification_loss: saturated true class") {
  linalg::Rng rng(103);
  net::ClassifierHead head(1);
  net::expand_head(head, {0, 1}, rng, net::HeadInit::zero);
  head.row(0).bias.value()(0, 0) = 30.0;  // true class wins by +30
  const double loss = graph_loss_value([&](net::Graph& g) {
    return losses::classification_loss(g, head, g.input(Matrix(1, 1, 0.0)), {0}, {0, 1});
  });
  CHECK(loss < 1e-12);
  CHECK(loss >= 0.0);
}

TEST_CASE("classification_loss: matches extended-precision evaluation") {
  linalg::Rng rng(104);
  const int n = 6, d = 3;
  const std::vector<int> classes = {0, 1, 2, 3};
  net::ClassifierHead head = random_head(d, classes, rng);
  const Matrix feats = random_matrix(n, d, rng);
  std::vector<int> labels(n);
  for (int& y : labels) y = rng.uniform_int(0, 3);

  const double got = graph_loss_value([&](net::Graph& g) {
    return losses::classification_loss(g, head, g.input(feats), labels, classes);
  });

  long double acc = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<long double> z(classes.size());
    for (std::size_t j = 0; j < classes.size(); ++j) {
      long double v = head.row(classes[j]).bias.value()(0, 0);
      for (int k = 0; k < d; ++k)
        v += static_cast<long double>(head.row(classes[j]).weight.value()(0, k)) * feats(i, k);
      z[j] = v;
    }
    long double sum = 0;
    for (long double v : z) sum += std::exp(v);
    acc -= z[labels[i]] - std::log(sum);
  }
  CHECK(std::abs(got - static_cast<double>(acc / n)) < 1e-10);
}

TEST_CASE("classification_loss: label outside the class set rejected") {
  linalg::Rng rng(105);
  net::ClassifierHead head = random_head(2, {0, 1}, rng);
  net::Graph g;
  CHECK_THROWS_AS(
      losses::classification_loss(g, head, g.input(Matrix(1, 2, 0.0)), {7}, {0, 1}),
      UnknownClass);
}

TEST_CASE("distillation_loss: single old class is exactly zero") {
  linalg::Rng rng(106);
  net::FeatureExtractorConfig arch;
  arch.input_dim = 2;
  arch.hidden = {3};
  arch.feature_dim = 2;
  net::FeatureExtractor fx = net::FeatureExtractor::build(arch, rng);
  net::ClassifierHead head = random_head(2, {0, 1}, rng);
  const net::ModelSnapshot snap = net::clone_freeze(fx, head, 0);
  losses::Batch batch;
  batch.inputs = random_matrix(4, 2, rng);
  batch.labels.assign(4, 1);
  batch.domains.assign(4, 0);
  const double loss = losses::distillation_loss_value(snap, fx, head, batch, {0});
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("distillation_loss: random instance matches direct double-softmax") {
  linalg::Rng rng(107);
  net::FeatureExtractorConfig arch;
  arch.input_dim = 3;
  arch.hidden = {4};
  arch.feature_dim = 3;
  net::FeatureExtractor prev_fx = net::FeatureExtractor::build(arch, rng);
  net::ClassifierHead prev_head = random_head(3, {0, 1, 2}, rng);
  const net::ModelSnapshot snap = net::clone_freeze(prev_fx, prev_head, 0);

  net::FeatureExtractor live_fx = net::FeatureExtractor::build(arch, rng);
  net::ClassifierHead live_head = random_head(3, {0, 1, 2, 3}, rng);

  losses::Batch batch;
  batch.inputs = random_matrix(5, 3, rng);
  batch.labels.assign(5, 3);
  batch.domains.assign(5, 0);
  const std::vector<int> old_classes = {0, 1, 2};

  const double got =
      losses::distillation_loss_value(snap, live_fx, live_head, batch, old_classes);

  const Matrix prev_feats = snap.forward_features(batch.inputs);
  const Matrix prev_probs = linalg::softmax_rows(snap.logits(prev_feats, old_classes));
  const Matrix live_feats = live_fx.eval_features(batch.inputs);
  const Matrix live_probs = linalg::softmax_rows(live_head.logits(live_feats, old_classes));
  long double acc = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j)
      acc -= static_cast<long double>(prev_probs(i, j)) * std::log(live_probs(i, j));
  CHECK(std::abs(got - static_cast<double>(acc / 5)) < 1e-10);
}

TEST_CASE("distillation_loss: empty old class set rejected") {
  linalg::Rng rng(108);
  net::ClassifierHead head = random_head(2, {0}, rng);
  net::Graph g;
  CHECK_THROWS_AS(
      losses::distillation_loss(g, g.input(Matrix(1, 2, 0.0)), head, Matrix(), {}),
      EmptyOldClassSet);
}

TEST_CASE("trips_base: coincident positives and distant negatives give zero") {
  Matrix f(4, 2);
  // two classes x two domains; positives coincide, negatives at distance 1
  f(0, 0) = 0;  f(0, 1) = 0;  // class 0 dom 0
  f(1, 0) = 0;  f(1, 1) = 0;  // class 0 dom 1
  f(2, 0) = 1;  f(2, 1) = 0;  // class 1 dom 0
  f(3, 0) = 1;  f(3, 1) = 0;  // class 1 dom 1
  const losses::PairMasks m = losses::pair_masks({0, 0, 1, 1}, {0, 1, 0, 1});
  const double loss = graph_loss_value(
      [&](net::Graph& g) { return losses::trips_base(g, g.input(f), m, 0.0); });
  CHECK(loss == 0.0);
}

TEST_CASE("trips_base: forced arithmetic for one anchor") {
  // anchor 0: positive at squared distance 2, negative at squared distance 1
  Matrix f(3, 2);
  f(0, 0) = 0;   f(0, 1) = 0;   // anchor: class 0, dom 0
  f(1, 0) = 1;   f(1, 1) = 1;   // positive: class 0, dom 1, d = 2
  f(2, 0) = 1;   f(2, 1) = 0;   // negative: class 1, dom 0, d = 1
  const losses::PairMasks m = losses::pair_masks({0, 0, 1}, {0, 1, 0});
  const double loss = graph_loss_value(
      [&](net::Graph& g) { return losses::trips_base(g, g.input(f), m, 0.0); });
  // anchors 0 and 1 are valid (anchor 2 has no positive partner)
  const double expected = brute_force_trips(f, m, Matrix(), 0.0);
  CHECK(loss == doctest::Approx(expected));
  // anchor 0's term alone is (2 - 1 + 0) = 1
  CHECK(std::max(dist_sq(f, 0, f, 1) - dist_sq(f, 0, f, 2), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("trips_base: brute-force oracle on random batches") {
  linalg::Rng rng(109);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = rng.uniform_int(2, 10);
    const Matrix f = random_matrix(n, 4, rng);
    std::vector<int> labels(n), domains(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = rng.uniform_int(0, 2);
      domains[i] = rng.uniform_int(0, 2);
    }
    const losses::PairMasks m = losses::pair_masks(labels, domains);
    const double got = graph_loss_value(
        [&](net::Graph& g) { return losses::trips_base(g, g.input(f), m, 0.0); });
    CHECK(std::abs(got - brute_force_trips(f, m, Matrix(), 0.0)) < 1e-10);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("trips_base: invariant under batch permutation") {
  linalg::Rng rng(110);
  const int n = 8;
  const Matrix f = random_matrix(n, 3, rng);
  std::vector<int> labels(n), domains(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = rng.uniform_int(0, 1);
    domains[i] = rng.uniform_int(0, 2);
  }
  const double base = graph_loss_value([&](net::Graph& g) {
    return losses::trips_base(g, g.input(f), losses::pair_masks(labels, domains), 0.0);
  });
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    Matrix pf(n, 3);
    std::vector<int> pl(n), pd(n);
    for (int i = 0; i < n; ++i) {
      pf.set_row(i, f.row(perm[i]));
      pl[i] = labels[perm[i]];
      pd[i] = domains[perm[i]];
    }
    const double permuted = graph_loss_value([&](net::Graph& g) {
      return losses::trips_base(g, g.input(pf), losses::pair_masks(pl, pd), 0.0);
    });
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("trips_incr: empty pseudo batch reduces to trips_base bit-for-bit") {
  linalg::Rng rng(111);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(2, 10);
    const Matrix f = random_matrix(n, 4, rng);
    std::vector<int> labels(n), domains(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = rng.uniform_int(0, 2);
      domains[i] = rng.uniform_int(0, 2);
    }
    const losses::PairMasks m = losses::pair_masks(labels, domains);
    const double a = graph_loss_value(
        [&](net::Graph& g) { return losses::trips_base(g, g.input(f), m, 0.0); });
    losses::PseudoBatch empty;
    const double b = graph_loss_value(
        [&](net::Graph& g) { return losses::trips_incr(g, g.input(f), m, empty, 0.0); });
    CHECK(a == b);  // bitwise
  }
}

TEST_CASE("trips_incr: close pseudo-sample determines the negative term") {
  linalg::Rng rng(112);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(3, 8);
    const Matrix f = random_matrix(n, 3, rng);
    std::vector<int> labels(n), domains(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = rng.uniform_int(0, 1);
      domains[i] = rng.uniform_int(0, 2);
    }
    const losses::PairMasks m = losses::pair_masks(labels, domains);
    losses::PseudoBatch pseudo;
    pseudo.feats = random_matrix(rng.uniform_int(1, 4), 3, rng, 0.2);
    pseudo.labels.assign(pseudo.feats.rows(), 99);
    const double got = graph_loss_value(
        [&](net::Graph& g) { return losses::trips_incr(g, g.input(f), m, pseudo, 0.0); });
    CHECK(std::abs(got - brute_force_trips(f, m, pseudo.feats, 0.0)) < 1e-10);
  }
}

TEST_CASE("trips_incr: pseudo at the anchor forces a unit term") {
  Matrix f(2, 2);
  f(0, 0) = 0;  f(0, 1) = 0;  // anchor, class 0 dom 0
  f(1, 0) = 1;  f(1, 1) = 0;  // positive, class 0 dom 1, d = 1
  const losses::PairMasks m = losses::pair_masks({0, 0}, {0, 1});
  losses::PseudoBatch pseudo;
  pseudo.feats = Matrix(1, 2);  // exactly on the anchor
  pseudo.labels = {99};
  const double loss = graph_loss_value(
      [&](net::Graph& g) { return losses::trips_incr(g, g.input(f), m, pseudo, 0.0); });
  // both anchors valid; anchor 0 term (1 - 0), anchor 1 term (1 - 1)
  CHECK(loss == doctest::Approx(0.5));
}

TEST_CASE("pseudo_classification_loss: uniform logits give ln 5") {
  linalg::Rng rng(113);
  net::ClassifierHead head(3);
  net::expand_head(head, {0, 1, 2, 3, 4}, rng, net::HeadInit::zero);
  losses::PseudoBatch pseudo;
  pseudo.feats = random_matrix(4, 3, rng);
  pseudo.labels = {0, 1, 0, 2};
  const double loss = graph_loss_value([&](net::Graph& g) {
    return losses::pseudo_classification_loss(g, head, pseudo, {0, 1, 2, 3, 4});
  });
  CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("pseudo_classification_loss: aligned feature scores below a random one") {
  net::ClassifierHead head(3);
  linalg::Rng rng(114);
  net::expand_head(head, {0, 1, 2}, rng, net::HeadInit::zero);
  head.row(0).weight.value()(0, 0) = 2.0;  // orthogonal rows
  head.row(1).weight.value()(0, 1) = 2.0;
  head.row(2).weight.value()(0, 2) = 2.0;

  losses::PseudoBatch aligned;
  aligned.feats = Matrix(1, 3);
  aligned.feats(0, 0) = 2.0;  // on its own class row
  aligned.labels = {0};
  losses::PseudoBatch off;
  off.feats = Matrix(1, 3);
  off.feats(0, 1) = 1.3;  // energy on a wrong row
  off.feats(0, 2) = -0.4;
  off.labels = {0};

  const double la = graph_loss_value([&](net::Graph& g) {
    return losses::pseudo_classification_loss(g, head, aligned, {0, 1, 2});
  });
  const double lb = graph_loss_value([&](net::Graph& g) {
    return losses::pseudo_classification_loss(g, head, off, {0, 1, 2});
  });
  CHECK(la < lb);
}

TEST_CASE("pseudo_classification_loss: concatenation is the sample-weighted mean") {
  linalg::Rng rng(115);
  net::ClassifierHead head = random_head(3, {0, 1, 2}, rng);
  losses::PseudoBatch a, b, both;
  a.feats = random_matrix(3, 3, rng);
  a.labels = {0, 1, 2};
  b.feats = random_matrix(2, 3, rng);
  b.labels = {1, 1};
  both.feats = Matrix(5, 3);
  for (int i = 0; i < 3; ++i) both.feats.set_row(i, a.feats.row(i));
  for (int i = 0; i < 2; ++i) both.feats.set_row(3 + i, b.feats.row(i));
  both.labels = {0, 1, 2, 1, 1};

  auto value = [&](const losses::PseudoBatch& p) {
    return graph_loss_value([&](net::Graph& g) {
      return losses::pseudo_classification_loss(g, head, p, {0, 1, 2});
    });
  };
  CHECK(value(both) == doctest::Approx((3 * value(a) + 2 * value(b)) / 5).epsilon(1e-12));
}

TEST_CASE("pseudo_classification_loss: empty pseudo batch rejected") {
  linalg::Rng rng(116);
  net::ClassifierHead head = random_head(2, {0, 1}, rng);
  losses::PseudoBatch empty;
  net::Graph g;
  CHECK_THROWS_AS(losses::pseudo_classification_loss(g, head, empty, {0, 1}),
                  EmptyPseudoBatch);
}

TEST_CASE("pseudo_classification_loss: gradients reach head parameters only") {
  linalg::Rng rng(117);
  net::FeatureExtractorConfig arch;
  arch.input_dim = 2;
  arch.hidden = {3};
  arch.feature_dim = 3;
  net::FeatureExtractor fx = net::FeatureExtractor::build(arch, rng);
  net::ClassifierHead head = random_head(3, {0, 1}, rng);
  losses::PseudoBatch pseudo;
  pseudo.feats = random_matrix(2, 3, rng);
  pseudo.labels = {0, 1};

  net::Graph g;
  net::Var loss = losses::pseudo_classification_loss(g, head, pseudo, {0, 1});
  std::vector<net::Tensor*> params = fx.parameters();
  for (net::Tensor* t : head.parameters()) params.push_back(t);
  net::GradientTape tape = g.backward(loss, params);
  for (net::Tensor* p : fx.parameters())
    CHECK(linalg::frobenius(tape.grad(*p)) == 0.0);
  double head_grad = 0;
  for (net::Tensor* p : head.parameters()) head_grad += linalg::frobenius(tape.grad(*p));
  CHECK(head_grad > 0.0);
}

TEST_CASE("total_loss: forced arithmetic") {
  net::Graph g;
  losses::LossConfig cfg;  // lambda 1, lambda' 30
  {
    losses::LossParts parts;
    parts.classification = g.scalar(0.7);
    parts.trips = g.scalar(0.2);
    CHECK(g.scalar_value(losses::total_loss(g, 0, parts, cfg)) == doctest::Approx(0.9));
  }
  {
    losses::LossParts parts;
    parts.classification = g.scalar(0.5);
    parts.pseudo = g.scalar(0.3);
    parts.trips = g.scalar(0.2);
    parts.distillation = g.scalar(0.01);
    CHECK(g.scalar_value(losses::total_loss(g, 1, parts, cfg)) == doctest::Approx(1.3));
  }
}

TEST_CASE("total_loss: lambda ablation reduces to class + pseudo") {
  net::Graph g;
  losses::LossConfig cfg;
  cfg.lambda = 0.0;
  cfg.lambda_prime = 0.0;
  losses::LossParts parts;
  parts.classification = g.scalar(0.42);
  parts.pseudo = g.scalar(0.13);
  parts.trips = g.scalar(5.0);
  parts.distillation = g.scalar(9.0);
  CHECK(g.scalar_value(losses::total_loss(g, 1, parts, cfg)) == doctest::Approx(0.55));
}

TEST_CASE("total_loss: missing terms rejected") {
  net::Graph g;
  losses::LossConfig cfg;
  losses::LossParts parts;
  parts.classification = g.scalar(0.5);
  CHECK_THROWS_AS(losses::total_loss(g, 0, parts, cfg), MissingTerm);
  parts.trips = g.scalar(0.1);
  CHECK_NOTHROW(losses::total_loss(g, 0, parts, cfg));
  CHECK_THROWS_AS(losses::total_loss(g, 1, parts, cfg), MissingTerm);
}
