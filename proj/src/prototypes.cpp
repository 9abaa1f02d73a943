#include "trips/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace trips::prototypes {

const LowerTriangular& GaussianPrototype::chol() const {
  if (!cache_) refresh_chol();
  return cache_->factor;
}

double GaussianPrototype::chol_jitter() const {
  if (!cache_) refresh_chol();
  return cache_->jitter_used;
}

void GaussianPrototype::set_sigma(SymMatrix s) {
  sigma = std::move(s);
  cache_.reset();
}

void GaussianPrototype::refresh_chol() const { cache_ = linalg::cholesky(sigma); }

const GaussianPrototype* find_prototype(const PrototypeSet& set, int class_id) {
  for (const auto& p : set)
    if (p.class_id == class_id) return &p;
  return nullptr;
}

DriftAccumulator DriftAccumulator::init(const PrototypeSet& prev) {
  DriftAccumulator acc;
  for (const auto& p : prev) {
    acc.delta_mu_ema.emplace(p.class_id, Vector(p.mu.size(), 0.0));
    acc.sigma_ema.emplace(p.class_id, p.sigma);
  }
  return acc;
}

PrototypeSet init_prototypes(const std::map<int, std::vector<Vector>>& feats_by_class,
                             double alpha, int session) {
  PrototypeSet out;
  for (const auto& [class_id, feats] : feats_by_class) {
    if (feats.size() < 2)
      throw InsufficientSamples("init_prototypes: class " + std::to_string(class_id) +
                                " has fewer than 2 samples");
    const int d = static_cast<int>(feats[0].size());
    const double n = static_cast<double>(feats.size());
    Vector mu(d, 0.0);
    for (const Vector& f : feats) linalg::axpy(1.0, f, mu);
    for (double& x : mu) x /= n;
    SymMatrix cov(d);
    for (const Vector& f : feats) {
      const Vector c = linalg::vsub(f, mu);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) cov.add_at(i, j, c[i] * c[j]);
    }
    for (double& x : cov.packed()) x /= n;
    GaussianPrototype p;
    p.class_id = class_id;
    p.mu = std::move(mu);
    p.session = session;
    p.set_sigma(linalg::shrink(cov, alpha));
    p.refresh_chol();
    out.push_back(std::move(p));
  }
  return out;
}

double drift_weight(const Vector& prev_feat, const Vector& mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("drift_weight: sigma must be positive");
  if (prev_feat.size() != mu.size()) throw ShapeError("drift_weight: dimension mismatch");
  const double d2 = linalg::norm_sq(linalg::vsub(prev_feat, mu));
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

void accumulate_batch_drift(DriftAccumulator& acc, const Matrix& now_feats, net::Mode now_mode,
                            const Matrix& prev_feats, net::Mode prev_mode,
                            const PrototypeSet& prev, const DriftConfig& cfg) {
  if (now_mode == net::Mode::train || prev_mode == net::Mode::train)
    throw ModelModeError("accumulate_batch_drift: features must come from eval-mode forwards");
  if (!linalg::same_shape(now_feats, prev_feats))
    throw ShapeError("accumulate_batch_drift: feature shapes differ");
  const int n = now_feats.rows();
  if (n == 0) throw ShapeError("accumulate_batch_drift: empty batch");
  const int d = now_feats.cols();
  const double eta = cfg.eta;

  for (const auto& proto : prev) {
    if (static_cast<int>(proto.mu.size()) != d)
      throw ShapeError("accumulate_batch_drift: prototype dimension mismatch");

    // Eq-style weighted mean of per-sample drift.
    std::vector<double> w(n);
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) {
      w[i] = drift_weight(prev_feats.row(i), proto.mu, cfg.sigma);
      wsum += w[i];
    }
    Vector delta_mu(d, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        delta_mu[j] += w[i] * (now_feats(i, j) - prev_feats(i, j));
    for (double& x : delta_mu) x /= wsum;

    Vector& ema_mu = acc.delta_mu_ema.at(proto.class_id);
    for (int j = 0; j < d; ++j) ema_mu[j] = eta * ema_mu[j] + (1.0 - eta) * delta_mu[j];

    // Covariance around the running mean mu^{t-1} + dmu^b for this batch.
    Vector running_mu(d);
    for (int j = 0; j < d; ++j) running_mu[j] = proto.mu[j] + ema_mu[j];
    SymMatrix cov(d);
    for (int i = 0; i < n; ++i) {
      Vector c(d);
      for (int j = 0; j < d; ++j) c[j] = now_feats(i, j) - running_mu[j];
      for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) cov.add_at(a, b, w[i] * c[a] * c[b]);
    }
    for (double& x : cov.packed()) x /= wsum;

    const SymMatrix shrunk = linalg::shrink(cov, cfg.alpha);
    SymMatrix& ema_sigma = acc.sigma_ema.at(proto.class_id);
    for (std::size_t k = 0; k < ema_sigma.packed().size(); ++k)
      ema_sigma.packed()[k] = eta * ema_sigma.packed()[k] + (1.0 - eta) * shrunk.packed()[k];
  }
  ++acc.batches;
}

PrototypeSet current_prototypes(const DriftAccumulator& acc, const PrototypeSet& prev) {
  PrototypeSet out;
  out.reserve(prev.size());
  for (const auto& p : prev) {
    GaussianPrototype q;
    q.class_id = p.class_id;
    q.session = p.session;
    q.mu = linalg::vadd(p.mu, acc.delta_mu_ema.at(p.class_id));
    q.set_sigma(acc.sigma_ema.at(p.class_id));
    out.push_back(std::move(q));
  }
  return out;
}

PrototypeSet finalize_drift(const DriftAccumulator& acc, const PrototypeSet& prev) {
  if (acc.batches < 1) throw EmptyAccumulator("finalize_drift: no batches accumulated");
  PrototypeSet out = current_prototypes(acc, prev);
  for (auto& p : out) {
    ++p.session;
    p.refresh_chol();
  }
  return out;
}

losses::PseudoBatch sample_pseudo(const PrototypeSet& protos, int count, linalg::Rng& rng) {
  if (protos.empty()) throw NoOldClasses("sample_pseudo: empty prototype set");
  if (count < 1) throw DomainError("sample_pseudo: count must be >= 1");
  const int d = static_cast<int>(protos.front().mu.size());
  losses::PseudoBatch out;
  out.feats = Matrix(count, d);
  out.labels.resize(count);
  for (int s = 0; s < count; ++s) {
    const int pick = rng.uniform_int(0, static_cast<int>(protos.size()) - 1);
    const GaussianPrototype& p = protos[pick];
    const Vector v = linalg::sample_standard_normal(d, rng);
    const Vector lv = p.chol().apply(v);
    for (int j = 0; j < d; ++j) out.feats(s, j) = p.mu[j] + lv[j];
    out.labels[s] = p.class_id;
  }
  return out;
}

namespace {

void write_double(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  os << buf;
}

double read_double(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw ParseError("prototypes: unexpected end of file");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str()) throw ParseError("prototypes: bad numeric token '" + tok + "'");
  return v;
}

void expect_token(std::istream& is, const std::string& expect) {
  std::string tok;
  if (!(is >> tok) || tok != expect)
    throw ParseError("prototypes: expected '" + expect + "', got '" + tok + "'");
}

}  // namespace

void save_prototypes(const std::string& path, const PrototypeSet& protos) {
  std::ofstream os(path);
  if (!os) throw RunArtifactError("cannot open prototype store for writing: " + path);
  os << "trips-prototypes v1\n";
  os << "count " << protos.size() << '\n';
  for (const auto& p : protos) {
    os << "proto " << p.class_id << ' ' << p.session << ' ' << p.mu.size() << '\n';
    os << "mu";
    for (double x : p.mu) {
      os << ' ';
      write_double(os, x);
    }
    os << '\n';
    os << "sigma";
    for (double x : p.sigma.packed()) {
      os << ' ';
      write_double(os, x);
    }
    os << '\n';
  }
  if (!os) throw RunArtifactError("prototype store write failed: " + path);
}

PrototypeSet load_prototypes(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw RunArtifactError("cannot open prototype store: " + path);
  expect_token(is, "trips-prototypes");
  expect_token(is, "v1");
  expect_token(is, "count");
  std::size_t count = 0;
  is >> count;
  PrototypeSet out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    expect_token(is, "proto");
    int class_id = 0, session = 0, d = 0;
    is >> class_id >> session >> d;
    GaussianPrototype p;
    p.class_id = class_id;
    p.session = session;
    p.mu.resize(d);
    expect_token(is, "mu");
    for (int j = 0; j < d; ++j) p.mu[j] = read_double(is);
    SymMatrix sigma(d);
    expect_token(is, "sigma");
    for (double& x : sigma.packed()) x = read_double(is);
    p.set_sigma(std::move(sigma));
    out.push_back(std::move(p));
  }
  if (!is) throw ParseError("prototypes: truncated file " + path);
  return out;
}

}  // namespace trips::prototypes
