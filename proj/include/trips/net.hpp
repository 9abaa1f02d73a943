#ifndef TRIPS_NET_HPP_
#define TRIPS_NET_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "trips/linalg.hpp"

// Small feed-forward feature extractor with feature batch normalization,
// per-class linear head, and a tape autodiff that gives exact reverse-mode
// gradients for everything the losses module builds.
namespace trips::net {

using linalg::Matrix;
using linalg::Vector;

enum class Mode { train, eval };
enum class Activation { relu, tanh, identity };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// A trainable tensor. Copies get fresh ids, so snapshots never collide with
// the live model in optimizer state or gradient accumulators.
class Tensor {
 public:
  Tensor() : id_(next_id()) {}
  explicit Tensor(Matrix v) : value_(std::move(v)), id_(next_id()) {}
  Tensor(const Tensor& other) : value_(other.value_), id_(next_id()) {}
  Tensor& operator=(const Tensor& other) {
    value_ = other.value_;  // keeps own id
    return *this;
  }
  Tensor(Tensor&&) = default;
  Tensor& operator=(Tensor&&) = default;

  Matrix& value() { return value_; }
  const Matrix& value() const { return value_; }
  std::int64_t id() const { return id_; }

 private:
  static std::int64_t next_id();
  Matrix value_;
  std::int64_t id_;
};

// Parameter-shaped gradient accumulators for a fixed parameter list.
// Parameters off the loss path keep exact zeros.
class GradientTape {
 public:
  GradientTape() = default;
  explicit GradientTape(const std::vector<Tensor*>& params);

  bool tracks(const Tensor& p) const { return grads_.count(p.id()) > 0; }
  Matrix& grad(const Tensor& p);
  const Matrix& grad(const Tensor& p) const;
  void accumulate(std::int64_t id, const Matrix& g);
  void scale_all(double s);

 private:
  std::unordered_map<std::int64_t, Matrix> grads_;
};

using Var = int;

// One loss evaluation: nodes appended in construction order, so reverse
// index order is a valid topological order for the backward sweep.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Matrix value);
  Var scalar(double value);

  Var affine(Var x, Tensor& weight, Tensor& bias);  // x (n x in), weight (out x in), bias (1 x out)
  Var relu(Var x);
  Var tanh_act(Var x);

  // Cross-entropy of row-softmax against integer column targets, averaged.
  Var softmax_nll(Var logits, const std::vector<int>& target_cols);
  // -mean_i sum_c T[i][c] * log softmax(logits)[i][c]; T held constant.
  Var softmax_xent(Var logits, Matrix target_probs);

  // Batch-hard triplet hinge. Per anchor: (max positive distance) minus
  // min(min batch-negative distance, min pseudo distance) plus margin,
  // clamped at zero. Anchors without a positive, or without any negative
  // candidate, are dropped from the averaging denominator. Pseudo rows are
  // constants and negatives for every anchor; pass a 0-row matrix for none.
  Var hard_triplet_hinge(Var feats, const std::vector<std::vector<bool>>& pos,
                         const std::vector<std::vector<bool>>& neg, const Matrix& pseudo,
                         double margin);

  Var add(Var a, Var b);
  Var scale(Var a, double s);

  const Matrix& value(Var v) const;
  double scalar_value(Var v) const;

  // Exact reverse-mode gradients of a scalar for the given parameter list.
  GradientTape backward(Var loss, const std::vector<Tensor*>& params);

  // Internal: used by FeatureExtractor/ClassifierHead forward builders.
  struct Node;
  Var emit(Matrix value, std::function<void(Graph&, int, GradientTape&)> back);
  Matrix& grad_of(int node);

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

// Per-feature normalization state on the extractor output (momentum 0.1,
// epsilon 1e-5 unless configured otherwise).
struct BatchNormState {
  Tensor gamma;  // 1 x d
  Tensor beta;   // 1 x d
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool enabled = true;
};

struct FeatureExtractorConfig {
  int input_dim = 16;
  std::vector<int> hidden = {64, 64};
  int feature_dim = 32;
  Activation hidden_act = Activation::relu;
  bool feature_batchnorm = true;
  double init_scale = 1.0;  // multiplies the Glorot uniform bound
};

struct AffineLayer {
  Tensor weight;  // out x in
  Tensor bias;    // 1 x out
  Activation act = Activation::identity;
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  static FeatureExtractor build(const FeatureExtractorConfig& cfg, linalg::Rng& rng);

  int input_dim() const { return input_dim_; }
  int feature_dim() const { return feature_dim_; }

  // Graph-building forward. Train mode uses batch statistics (n >= 2) and,
  // when update_running is set, folds them into the running estimates.
  Var forward(Graph& g, Var x, Mode mode, bool update_running = true);
  Var forward_eval(Graph& g, Var x) const;

  // Plain evaluation via a throwaway graph; same code path as forward.
  Matrix forward_features(const Matrix& batch, Mode mode, bool update_running = true);
  Matrix eval_features(const Matrix& batch) const;

  std::vector<Tensor*> parameters();
  std::vector<AffineLayer>& layers() { return layers_; }
  const std::vector<AffineLayer>& layers() const { return layers_; }
  BatchNormState& norm() { return norm_; }
  const BatchNormState& norm() const { return norm_; }

  friend bool value_equal(const FeatureExtractor& a, const FeatureExtractor& b);

 private:
  std::vector<AffineLayer> layers_;
  BatchNormState norm_;
  int input_dim_ = 0;
  int feature_dim_ = 0;
};

struct ClassRow {
  Tensor weight;  // 1 x d
  Tensor bias;    // 1 x 1
};

enum class HeadInit { gaussian, zero };

class ClassifierHead {
 public:
  ClassifierHead() = default;
  explicit ClassifierHead(int feature_dim) : feature_dim_(feature_dim) {}

  int feature_dim() const { return feature_dim_; }
  bool has_class(int class_id) const { return rows_.count(class_id) > 0; }
  int size() const { return static_cast<int>(rows_.size()); }
  std::vector<int> registered() const;
  ClassRow& row(int class_id);
  const ClassRow& row(int class_id) const;

  // Logits for a class subset: logits[i][j] = w_{c_j} . f_i + b_{c_j}.
  Var forward_logits(Graph& g, Var feats, const std::vector<int>& class_set);
  Matrix logits(const Matrix& feats, const std::vector<int>& class_set) const;

  std::vector<Tensor*> parameters();

  friend void expand_head(ClassifierHead& head, const std::vector<int>& new_classes,
                          linalg::Rng& rng, HeadInit init, double init_std);
  friend bool value_equal(const ClassifierHead& a, const ClassifierHead& b);

 private:
  std::map<int, ClassRow> rows_;  // ordered: deterministic parameter order
  int feature_dim_ = 0;
};

// Old rows stay bit-identical; new rows follow the init rule
// (default gaussian std 0.01 weights, zero bias).
void expand_head(ClassifierHead& head, const std::vector<int>& new_classes, linalg::Rng& rng,
                 HeadInit init = HeadInit::gaussian, double init_std = 0.01);

struct ModelSnapshot {
  FeatureExtractor extractor;
  ClassifierHead head;
  int session = 0;
  bool frozen = true;

  Matrix forward_features(const Matrix& batch) const;  // always eval mode
  Matrix logits(const Matrix& feats, const std::vector<int>& class_set) const;
};

ModelSnapshot clone_freeze(const FeatureExtractor& model, const ClassifierHead& head, int session);

bool value_equal(const FeatureExtractor& a, const FeatureExtractor& b);
bool value_equal(const ClassifierHead& a, const ClassifierHead& b);
bool value_equal(const ModelSnapshot& a, const ModelSnapshot& b);

// Versioned textual checkpoint container; doubles stored as hexfloats so a
// write-then-read round-trips bit-exactly.
void save_checkpoint(const std::string& path, const FeatureExtractor& model,
                     const ClassifierHead& head, int session);

struct LoadedModel {
  FeatureExtractor extractor;
  ClassifierHead head;
  int session = 0;
};
LoadedModel load_checkpoint(const std::string& path);

}  // namespace trips::net

#endif  // TRIPS_NET_HPP_
