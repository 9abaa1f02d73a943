#ifndef TRIPS_PROTOTYPES_HPP_
#define TRIPS_PROTOTYPES_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trips/losses.hpp"
#include "trips/net.hpp"

// Per-class multivariate Gaussian prototypes: drift estimation across
// incremental sessions and pseudo-feature sampling via the Cholesky factor.
namespace trips::prototypes {

using linalg::LowerTriangular;
using linalg::Matrix;
using linalg::SymMatrix;
using linalg::Vector;

struct GaussianPrototype {
  int class_id = -1;
  Vector mu;
  SymMatrix sigma;
  int session = 0;

  const LowerTriangular& chol() const;  // lazy, cached
  double chol_jitter() const;           // jitter the cached factorization needed
  bool has_chol_cache() const { return cache_.has_value(); }
  void set_sigma(SymMatrix s);          // invalidates the cache
  void refresh_chol() const;

 private:
  mutable std::optional<linalg::CholResult> cache_;
};

// Ordered by class id.
using PrototypeSet = std::vector<GaussianPrototype>;

const GaussianPrototype* find_prototype(const PrototypeSet& set, int class_id);

struct DriftConfig {
  double sigma = 0.5;  // Gaussian similarity bandwidth
  double eta = 0.1;    // EMA factor
  double alpha = 0.05; // shrinkage toward the isotropic
};

// EMA state across the batches of one session. Seeded with zero mean drift
// and the previous session's covariances.
struct DriftAccumulator {
  std::map<int, Vector> delta_mu_ema;
  std::map<int, SymMatrix> sigma_ema;
  int batches = 0;

  static DriftAccumulator init(const PrototypeSet& prev);
};

// Empirical mean + 1/n covariance per class, shrunk by alpha. Each class
// needs at least two feature vectors.
PrototypeSet init_prototypes(const std::map<int, std::vector<Vector>>& feats_by_class,
                             double alpha, int session);

// exp(-||prev_feat - mu||^2 / (2 sigma^2)); similarity of a sample to an
// old prototype mean through the previous extractor.
double drift_weight(const Vector& prev_feat, const Vector& mu, double sigma);

// One batch of drift statistics. Both feature matrices must come from
// eval-mode forwards of the identical batch; the mode tags make that
// checkable (ModelModeError otherwise).
void accumulate_batch_drift(DriftAccumulator& acc, const Matrix& now_feats, net::Mode now_mode,
                            const Matrix& prev_feats, net::Mode prev_mode,
                            const PrototypeSet& prev, const DriftConfig& cfg);

// Prototype view at the current accumulator state: mu^{t-1} + dmu^b and
// Sigma'^b. Used for sampling while the session is still running.
PrototypeSet current_prototypes(const DriftAccumulator& acc, const PrototypeSet& prev);

// End-of-session update; requires at least one accumulated batch.
PrototypeSet finalize_drift(const DriftAccumulator& acc, const PrototypeSet& prev);

// `count` pseudo-features: class uniform over the set, then mu + L v with
// v standard normal.
losses::PseudoBatch sample_pseudo(const PrototypeSet& protos, int count, linalg::Rng& rng);

void save_prototypes(const std::string& path, const PrototypeSet& protos);
PrototypeSet load_prototypes(const std::string& path);

}  // namespace trips::prototypes

#endif  // TRIPS_PROTOTYPES_HPP_
