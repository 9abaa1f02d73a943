#include "trips/net.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace trips::net {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw DomainError("unknown activation: " + name);
}

std::int64_t Tensor::next_id() {
  static std::atomic<std::int64_t> counter{1};
  return counter.fetch_add(1);
}

GradientTape::GradientTape(const std::vector<Tensor*>& params) {
  for (const Tensor* p : params)
    grads_.emplace(p->id(), Matrix(p->value().rows(), p->value().cols()));
}

Matrix& GradientTape::grad(const Tensor& p) {
  auto it = grads_.find(p.id());
  if (it == grads_.end()) throw ShapeError("GradientTape: parameter not tracked");
  return it->second;
}

const Matrix& GradientTape::grad(const Tensor& p) const {
  auto it = grads_.find(p.id());
  if (it == grads_.end()) throw ShapeError("GradientTape: parameter not tracked");
  return it->second;
}

void GradientTape::accumulate(std::int64_t id, const Matrix& g) {
  auto it = grads_.find(id);
  if (it == grads_.end()) return;  // frozen or untracked parameter
  if (!linalg::same_shape(it->second, g))
    throw ShapeError("GradientTape: accumulator shape mismatch");
  it->second = linalg::add(it->second, g);
}

void GradientTape::scale_all(double s) {
  for (auto& [id, g] : grads_) g = linalg::scale(g, s);
}

struct Graph::Node {
  Matrix value;
  Matrix grad;
  std::function<void(Graph&, int, GradientTape&)> back;
};

Graph::Graph() = default;
Graph::~Graph() = default;

Var Graph::emit(Matrix value, std::function<void(Graph&, int, GradientTape&)> back) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->back = std::move(back);
  nodes_.push_back(std::move(node));
  return static_cast<Var>(nodes_.size()) - 1;
}

Matrix& Graph::grad_of(int node) { return nodes_[node]->grad; }

const Matrix& Graph::value(Var v) const { return nodes_[v]->value; }

double Graph::scalar_value(Var v) const {
  const Matrix& m = nodes_[v]->value;
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar_value: node is not scalar");
  return m(0, 0);
}

Var Graph::input(Matrix value) { return emit(std::move(value), nullptr); }

Var Graph::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return emit(std::move(m), nullptr);
}

Var Graph::affine(Var x, Tensor& weight, Tensor& bias) {
  const Matrix& xv = value(x);
  const Matrix& w = weight.value();  // out x in
  const Matrix& b = bias.value();    // 1 x out
  if (xv.cols() != w.cols()) throw ShapeError("affine: input width != weight fan-in");
  if (b.rows() != 1 || b.cols() != w.rows()) throw ShapeError("affine: bias shape");
  Matrix y = linalg::matmul_bt(xv, w);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);

  Matrix w_copy = w;
  const std::int64_t wid = weight.id(), bid = bias.id();
  return emit(std::move(y), [x, w_copy, wid, bid](Graph& g, int self, GradientTape& tape) {
    const Matrix& dy = g.grad_of(self);
    const Matrix& xv2 = g.value(x);
    g.grad_of(x) = linalg::add(g.grad_of(x), linalg::matmul(dy, w_copy));
    tape.accumulate(wid, linalg::matmul_at(dy, xv2));
    Matrix db(1, dy.cols());
    linalg::Vector cs = linalg::col_sum(dy);
    for (int j = 0; j < dy.cols(); ++j) db(0, j) = cs[j];
    tape.accumulate(bid, db);
  });
}

Var Graph::relu(Var x) {
  Matrix y = value(x);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j)
      if (y(i, j) < 0.0) y(i, j) = 0.0;
  return emit(std::move(y), [x](Graph& g, int self, GradientTape&) {
    const Matrix& dy = g.grad_of(self);
    const Matrix& xv = g.value(x);
    Matrix& dx = g.grad_of(x);
    for (int i = 0; i < dy.rows(); ++i)
      for (int j = 0; j < dy.cols(); ++j)
        if (xv(i, j) > 0.0) dx(i, j) += dy(i, j);
  });
}

Var Graph::tanh_act(Var x) {
  Matrix y = value(x);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) = std::tanh(y(i, j));
  return emit(std::move(y), [x](Graph& g, int self, GradientTape&) {
    const Matrix& dy = g.grad_of(self);
    const Matrix& yv = g.value(self);
    Matrix& dx = g.grad_of(x);
    for (int i = 0; i < dy.rows(); ++i)
      for (int j = 0; j < dy.cols(); ++j) dx(i, j) += dy(i, j) * (1.0 - yv(i, j) * yv(i, j));
  });
}

Var Graph::softmax_nll(Var logits, const std::vector<int>& target_cols) {
  const Matrix& z = value(logits);
  const int n = z.rows();
  if (static_cast<int>(target_cols.size()) != n)
    throw ShapeError("softmax_nll: one target per row required");
  for (int t : target_cols)
    if (t < 0 || t >= z.cols()) throw UnknownClass("softmax_nll: target column out of range");
  Matrix probs = linalg::softmax_rows(z);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) loss -= std::log(probs(i, target_cols[i]));
  loss /= n;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return emit(std::move(out),
              [logits, probs, target_cols, n](Graph& g, int self, GradientTape&) {
                const double gscale = g.grad_of(self)(0, 0) / n;
                Matrix& dz = g.grad_of(logits);
                for (int i = 0; i < probs.rows(); ++i)
                  for (int j = 0; j < probs.cols(); ++j) {
                    double d = probs(i, j);
                    if (j == target_cols[i]) d -= 1.0;
                    dz(i, j) += gscale * d;
                  }
              });
}

Var Graph::softmax_xent(Var logits, Matrix target_probs) {
  const Matrix& z = value(logits);
  if (!linalg::same_shape(z, target_probs))
    throw ShapeError("softmax_xent: target shape mismatch");
  const int n = z.rows();
  Matrix probs = linalg::softmax_rows(z);
  double loss = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < z.cols(); ++j)
      if (target_probs(i, j) != 0.0) loss -= target_probs(i, j) * std::log(probs(i, j));
  loss /= n;
  Matrix out(1, 1);
  out(0, 0) = loss;
  Matrix targets = std::move(target_probs);
  return emit(std::move(out), [logits, probs, targets, n](Graph& g, int self, GradientTape&) {
    const double gscale = g.grad_of(self)(0, 0) / n;
    Matrix& dz = g.grad_of(logits);
    for (int i = 0; i < probs.rows(); ++i) {
      double trow = 0.0;
      for (int j = 0; j < probs.cols(); ++j) trow += targets(i, j);
      for (int j = 0; j < probs.cols(); ++j)
        dz(i, j) += gscale * (trow * probs(i, j) - targets(i, j));
    }
  });
}

namespace {

struct TripletPick {
  int anchor;
  int hardest_pos;
  int neg_index;    // batch row or pseudo row
  bool neg_is_pseudo;
};

double row_dist_sq(const Matrix& a, int i, const Matrix& b, int j) {
  double acc = 0.0;
  for (int k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    acc += d * d;
  }
  return acc;
}

}  // namespace

Var Graph::hard_triplet_hinge(Var feats, const std::vector<std::vector<bool>>& pos,
                              const std::vector<std::vector<bool>>& neg, const Matrix& pseudo,
                              double margin) {
  const Matrix& f = value(feats);
  const int n = f.rows();
  if (static_cast<int>(pos.size()) != n || static_cast<int>(neg.size()) != n)
    throw ShapeError("hard_triplet_hinge: mask size != batch size");
  if (pseudo.rows() > 0 && pseudo.cols() != f.cols())
    throw ShapeError("hard_triplet_hinge: pseudo feature width mismatch");

  std::vector<TripletPick> active;  // anchors whose hinge is strictly positive
  int valid = 0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double best_pos = -1.0;
    int best_pos_j = -1;
    for (int j = 0; j < n; ++j) {
      if (j == i || !pos[i][j]) continue;
      const double d = row_dist_sq(f, i, f, j);
      if (d > best_pos) {
        best_pos = d;
        best_pos_j = j;
      }
    }
    if (best_pos_j < 0) continue;

    double best_neg = -1.0;
    int best_neg_j = -1;
    bool neg_is_pseudo = false;
    for (int j = 0; j < n; ++j) {
      if (j == i || !neg[i][j]) continue;
      const double d = row_dist_sq(f, i, f, j);
      if (best_neg_j < 0 || d < best_neg) {
        best_neg = d;
        best_neg_j = j;
      }
    }
    for (int k = 0; k < pseudo.rows(); ++k) {
      const double d = row_dist_sq(f, i, pseudo, k);
      if (best_neg_j < 0 || d < best_neg) {
        best_neg = d;
        best_neg_j = k;
        neg_is_pseudo = true;
      }
    }
    if (best_neg_j < 0) continue;

    ++valid;
    const double term = best_pos - best_neg + margin;
    if (term > 0.0) {
      total += term;
      active.push_back({i, best_pos_j, best_neg_j, neg_is_pseudo});
    }
  }

  Matrix out(1, 1);
  out(0, 0) = valid > 0 ? total / valid : 0.0;
  Matrix pseudo_copy = pseudo;
  return emit(std::move(out),
              [feats, active, valid, pseudo_copy](Graph& g, int self, GradientTape&) {
                if (valid == 0) return;
                const double coeff = g.grad_of(self)(0, 0) / valid;
                const Matrix& f = g.value(feats);
                Matrix& df = g.grad_of(feats);
                const int d = f.cols();
                for (const TripletPick& p : active) {
                  for (int k = 0; k < d; ++k) {
                    const double dp = f(p.anchor, k) - f(p.hardest_pos, k);
                    df(p.anchor, k) += coeff * 2.0 * dp;
                    df(p.hardest_pos, k) -= coeff * 2.0 * dp;
                    const double dn = p.neg_is_pseudo
                                          ? f(p.anchor, k) - pseudo_copy(p.neg_index, k)
                                          : f(p.anchor, k) - f(p.neg_index, k);
                    df(p.anchor, k) -= coeff * 2.0 * dn;
                    if (!p.neg_is_pseudo) df(p.neg_index, k) += coeff * 2.0 * dn;
                  }
                }
              });
}

Var Graph::add(Var a, Var b) {
  Matrix y = linalg::add(value(a), value(b));
  return emit(std::move(y), [a, b](Graph& g, int self, GradientTape&) {
    const Matrix& dy = g.grad_of(self);
    g.grad_of(a) = linalg::add(g.grad_of(a), dy);
    g.grad_of(b) = linalg::add(g.grad_of(b), dy);
  });
}

Var Graph::scale(Var a, double s) {
  Matrix y = linalg::scale(value(a), s);
  return emit(std::move(y), [a, s](Graph& g, int self, GradientTape&) {
    g.grad_of(a) = linalg::add(g.grad_of(a), linalg::scale(g.grad_of(self), s));
  });
}

GradientTape Graph::backward(Var loss, const std::vector<Tensor*>& params) {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be scalar");
  GradientTape tape(params);
  for (auto& node : nodes_) node->grad = Matrix(node->value.rows(), node->value.cols());
  nodes_[loss]->grad(0, 0) = 1.0;
  for (int i = loss; i >= 0; --i)
    if (nodes_[i]->back) nodes_[i]->back(*this, i, tape);
  return tape;
}

// ---------------------------------------------------------------------------
// Feature extractor
// ---------------------------------------------------------------------------

FeatureExtractor FeatureExtractor::build(const FeatureExtractorConfig& cfg, linalg::Rng& rng) {
  FeatureExtractor fx;
  fx.input_dim_ = cfg.input_dim;
  fx.feature_dim_ = cfg.feature_dim;
  std::vector<int> dims;
  dims.push_back(cfg.input_dim);
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(cfg.feature_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = cfg.init_scale * std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    AffineLayer layer;
    layer.weight = Tensor(std::move(w));
    layer.bias = Tensor(Matrix(1, fan_out));
    const bool last = (l + 2 == dims.size());
    layer.act = last ? Activation::identity : cfg.hidden_act;
    fx.layers_.push_back(std::move(layer));
  }
  fx.norm_.enabled = cfg.feature_batchnorm;
  fx.norm_.gamma = Tensor(Matrix(1, cfg.feature_dim, 1.0));
  fx.norm_.beta = Tensor(Matrix(1, cfg.feature_dim, 0.0));
  fx.norm_.running_mean.assign(cfg.feature_dim, 0.0);
  fx.norm_.running_var.assign(cfg.feature_dim, 1.0);
  return fx;
}

namespace {

Var apply_activation(Graph& g, Var x, Activation act) {
  switch (act) {
    case Activation::relu: return g.relu(x);
    case Activation::tanh: return g.tanh_act(x);
    case Activation::identity: return x;
  }
  return x;
}

Var batchnorm_eval_node(Graph& g, Var x, const BatchNormState& bn) {
  const Matrix& xv = g.value(x);
  const int n = xv.rows(), d = xv.cols();
  if (d != static_cast<int>(bn.running_mean.size()))
    throw ShapeError("batchnorm: feature width mismatch");
  Matrix y(n, d), xhat(n, d);
  std::vector<double> inv(d);
  for (int j = 0; j < d; ++j) inv[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
  const Matrix& gamma = bn.gamma.value();
  const Matrix& beta = bn.beta.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - bn.running_mean[j]) * inv[j];
      y(i, j) = gamma(0, j) * xhat(i, j) + beta(0, j);
    }
  Matrix gamma_copy = gamma;
  const std::int64_t gid = bn.gamma.id(), bid = bn.beta.id();
  return g.emit(std::move(y), [x, xhat, inv, gamma_copy, gid, bid](Graph& gg, int self,
                                                                   GradientTape& tape) {
    const Matrix& dy = gg.grad_of(self);
    Matrix& dx = gg.grad_of(x);
    Matrix dgamma(1, dy.cols()), dbeta(1, dy.cols());
    for (int i = 0; i < dy.rows(); ++i)
      for (int j = 0; j < dy.cols(); ++j) {
        dx(i, j) += dy(i, j) * gamma_copy(0, j) * inv[j];
        dgamma(0, j) += dy(i, j) * xhat(i, j);
        dbeta(0, j) += dy(i, j);
      }
    tape.accumulate(gid, dgamma);
    tape.accumulate(bid, dbeta);
  });
}

Var batchnorm_train_node(Graph& g, Var x, BatchNormState& bn, bool update_running) {
  const Matrix& xv = g.value(x);
  const int n = xv.rows(), d = xv.cols();
  if (d != static_cast<int>(bn.running_mean.size()))
    throw ShapeError("batchnorm: feature width mismatch");
  if (n < 2) throw ShapeError("batchnorm: train mode needs a batch of at least 2");

  std::vector<double> mu(d, 0.0), var(d, 0.0), inv(d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < n; ++i) mu[j] += xv(i, j);
    mu[j] /= n;
    for (int i = 0; i < n; ++i) {
      const double c = xv(i, j) - mu[j];
      var[j] += c * c;
    }
    var[j] /= n;
    inv[j] = 1.0 / std::sqrt(var[j] + bn.eps);
  }
  if (update_running) {
    for (int j = 0; j < d; ++j) {
      bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mu[j];
      const double unbiased = var[j] * static_cast<double>(n) / (n - 1);
      bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * unbiased;
    }
  }

  Matrix y(n, d), xhat(n, d), centered(n, d);
  const Matrix& gamma = bn.gamma.value();
  const Matrix& beta = bn.beta.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      centered(i, j) = xv(i, j) - mu[j];
      xhat(i, j) = centered(i, j) * inv[j];
      y(i, j) = gamma(0, j) * xhat(i, j) + beta(0, j);
    }
  Matrix gamma_copy = gamma;
  const std::int64_t gid = bn.gamma.id(), bid = bn.beta.id();
  return g.emit(std::move(y), [x, xhat, centered, inv, gamma_copy, gid, bid, n](
                                  Graph& gg, int self, GradientTape& tape) {
    const Matrix& dy = gg.grad_of(self);
    const int d2 = dy.cols();
    Matrix& dx = gg.grad_of(x);
    Matrix dgamma(1, d2), dbeta(1, d2);
    for (int j = 0; j < d2; ++j) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int i = 0; i < n; ++i) {
        const double dxh = dy(i, j) * gamma_copy(0, j);
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * xhat(i, j);
        dgamma(0, j) += dy(i, j) * xhat(i, j);
        dbeta(0, j) += dy(i, j);
      }
      // dx = (inv/n) * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
      for (int i = 0; i < n; ++i) {
        const double dxh = dy(i, j) * gamma_copy(0, j);
        dx(i, j) += inv[j] / n * (n * dxh - sum_dxhat - xhat(i, j) * sum_dxhat_xhat);
      }
    }
    tape.accumulate(gid, dgamma);
    tape.accumulate(bid, dbeta);
  });
}

}  // namespace

Var FeatureExtractor::forward(Graph& g, Var x, Mode mode, bool update_running) {
  if (g.value(x).cols() != input_dim_) throw ShapeError("forward: input width mismatch");
  if (g.value(x).rows() < 1) throw ShapeError("forward: empty batch");
  Var h = x;
  for (auto& layer : layers_) {
    h = g.affine(h, layer.weight, layer.bias);
    h = apply_activation(g, h, layer.act);
  }
  if (norm_.enabled) {
    h = (mode == Mode::train) ? batchnorm_train_node(g, h, norm_, update_running)
                              : batchnorm_eval_node(g, h, norm_);
  }
  return h;
}

Var FeatureExtractor::forward_eval(Graph& g, Var x) const {
  if (g.value(x).cols() != input_dim_) throw ShapeError("forward: input width mismatch");
  if (g.value(x).rows() < 1) throw ShapeError("forward: empty batch");
  Var h = x;
  for (const auto& layer : layers_) {
    // affine() only reads values and ids; the const_cast never writes.
    h = g.affine(h, const_cast<Tensor&>(layer.weight), const_cast<Tensor&>(layer.bias));
    h = apply_activation(g, h, layer.act);
  }
  if (norm_.enabled) h = batchnorm_eval_node(g, h, norm_);
  return h;
}

Matrix FeatureExtractor::forward_features(const Matrix& batch, Mode mode, bool update_running) {
  Graph g;
  Var x = g.input(batch);
  Var out = forward(g, x, mode, update_running);
  return g.value(out);
}

Matrix FeatureExtractor::eval_features(const Matrix& batch) const {
  Graph g;
  Var x = g.input(batch);
  Var out = forward_eval(g, x);
  return g.value(out);
}

std::vector<Tensor*> FeatureExtractor::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  if (norm_.enabled) {
    out.push_back(&norm_.gamma);
    out.push_back(&norm_.beta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classifier head
// ---------------------------------------------------------------------------

std::vector<int> ClassifierHead::registered() const {
  std::vector<int> ids;
  ids.reserve(rows_.size());
  for (const auto& [id, row] : rows_) ids.push_back(id);
  return ids;
}

ClassRow& ClassifierHead::row(int class_id) {
  auto it = rows_.find(class_id);
  if (it == rows_.end()) throw UnknownClass("head: unregistered class " + std::to_string(class_id));
  return it->second;
}

const ClassRow& ClassifierHead::row(int class_id) const {
  auto it = rows_.find(class_id);
  if (it == rows_.end()) throw UnknownClass("head: unregistered class " + std::to_string(class_id));
  return it->second;
}

Var ClassifierHead::forward_logits(Graph& g, Var feats, const std::vector<int>& class_set) {
  const Matrix& f = g.value(feats);
  if (f.cols() != feature_dim_) throw ShapeError("forward_logits: feature width mismatch");
  const int k = static_cast<int>(class_set.size());
  if (k == 0) throw ShapeError("forward_logits: empty class set");
  Matrix theta(k, feature_dim_);
  std::vector<std::int64_t> wids(k), bids(k);
  Matrix y(f.rows(), k);
  for (int j = 0; j < k; ++j) {
    const ClassRow& r = row(class_set[j]);
    wids[j] = r.weight.id();
    bids[j] = r.bias.id();
    const Matrix& w = r.weight.value();
    const double b = r.bias.value()(0, 0);
    for (int c = 0; c < feature_dim_; ++c) theta(j, c) = w(0, c);
    for (int i = 0; i < f.rows(); ++i) {
      double acc = b;
      for (int c = 0; c < feature_dim_; ++c) acc += w(0, c) * f(i, c);
      y(i, j) = acc;
    }
  }
  return g.emit(std::move(y), [feats, theta, wids, bids](Graph& gg, int self, GradientTape& tape) {
    const Matrix& dy = gg.grad_of(self);
    const Matrix& f2 = gg.value(feats);
    gg.grad_of(feats) = linalg::add(gg.grad_of(feats), linalg::matmul(dy, theta));
    for (int j = 0; j < dy.cols(); ++j) {
      Matrix dw(1, f2.cols());
      double db = 0.0;
      for (int i = 0; i < dy.rows(); ++i) {
        const double d = dy(i, j);
        if (d == 0.0) continue;
        db += d;
        for (int c = 0; c < f2.cols(); ++c) dw(0, c) += d * f2(i, c);
      }
      tape.accumulate(wids[j], dw);
      Matrix dbm(1, 1);
      dbm(0, 0) = db;
      tape.accumulate(bids[j], dbm);
    }
  });
}

Matrix ClassifierHead::logits(const Matrix& feats, const std::vector<int>& class_set) const {
  if (feats.cols() != feature_dim_) throw ShapeError("logits: feature width mismatch");
  Matrix y(feats.rows(), static_cast<int>(class_set.size()));
  for (int j = 0; j < y.cols(); ++j) {
    const ClassRow& r = row(class_set[j]);
    const Matrix& w = r.weight.value();
    const double b = r.bias.value()(0, 0);
    for (int i = 0; i < feats.rows(); ++i) {
      double acc = b;
      for (int c = 0; c < feature_dim_; ++c) acc += w(0, c) * feats(i, c);
      y(i, j) = acc;
    }
  }
  return y;
}

std::vector<Tensor*> ClassifierHead::parameters() {
  std::vector<Tensor*> out;
  for (auto& [id, r] : rows_) {
    out.push_back(&r.weight);
    out.push_back(&r.bias);
  }
  return out;
}

void expand_head(ClassifierHead& head, const std::vector<int>& new_classes, linalg::Rng& rng,
                 HeadInit init, double init_std) {
  for (int id : new_classes)
    if (head.has_class(id))
      throw DuplicateClass("expand_head: class " + std::to_string(id) + " already registered");
  for (int id : new_classes) {
    Matrix w(1, head.feature_dim());
    if (init == HeadInit::gaussian)
      for (int c = 0; c < head.feature_dim(); ++c) w(0, c) = rng.normal() * init_std;
    ClassRow r;
    r.weight = Tensor(std::move(w));
    r.bias = Tensor(Matrix(1, 1));
    head.rows_.emplace(id, std::move(r));
  }
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

ModelSnapshot clone_freeze(const FeatureExtractor& model, const ClassifierHead& head,
                           int session) {
  ModelSnapshot snap;
  snap.extractor = model;
  snap.head = head;
  snap.session = session;
  snap.frozen = true;
  return snap;
}

Matrix ModelSnapshot::forward_features(const Matrix& batch) const {
  return extractor.eval_features(batch);
}

Matrix ModelSnapshot::logits(const Matrix& feats, const std::vector<int>& class_set) const {
  return head.logits(feats, class_set);
}

bool value_equal(const FeatureExtractor& a, const FeatureExtractor& b) {
  if (a.input_dim_ != b.input_dim_ || a.feature_dim_ != b.feature_dim_) return false;
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].act != b.layers_[i].act) return false;
    if (!linalg::bit_equal(a.layers_[i].weight.value(), b.layers_[i].weight.value())) return false;
    if (!linalg::bit_equal(a.layers_[i].bias.value(), b.layers_[i].bias.value())) return false;
  }
  if (a.norm_.enabled != b.norm_.enabled) return false;
  if (a.norm_.enabled) {
    if (!linalg::bit_equal(a.norm_.gamma.value(), b.norm_.gamma.value())) return false;
    if (!linalg::bit_equal(a.norm_.beta.value(), b.norm_.beta.value())) return false;
    if (a.norm_.running_mean != b.norm_.running_mean) return false;
    if (a.norm_.running_var != b.norm_.running_var) return false;
  }
  return true;
}

bool value_equal(const ClassifierHead& a, const ClassifierHead& b) {
  if (a.feature_dim_ != b.feature_dim_) return false;
  if (a.rows_.size() != b.rows_.size()) return false;
  auto ita = a.rows_.begin();
  auto itb = b.rows_.begin();
  for (; ita != a.rows_.end(); ++ita, ++itb) {
    if (ita->first != itb->first) return false;
    if (!linalg::bit_equal(ita->second.weight.value(), itb->second.weight.value())) return false;
    if (!linalg::bit_equal(ita->second.bias.value(), itb->second.bias.value())) return false;
  }
  return true;
}

bool value_equal(const ModelSnapshot& a, const ModelSnapshot& b) {
  return a.session == b.session && value_equal(a.extractor, b.extractor) &&
         value_equal(a.head, b.head);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

void write_double(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  os << buf;
}

void write_matrix(std::ostream& os, const std::string& key, const Matrix& m) {
  os << key << ' ' << m.rows() << ' ' << m.cols();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      os << ' ';
      write_double(os, m(i, j));
    }
  os << '\n';
}

double read_double(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw ParseError("checkpoint: unexpected end of file");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str()) throw ParseError("checkpoint: bad numeric token '" + tok + "'");
  return v;
}

Matrix read_matrix(std::istream& is, const std::string& expect_key) {
  std::string key;
  int rows = 0, cols = 0;
  if (!(is >> key >> rows >> cols)) throw ParseError("checkpoint: truncated tensor header");
  if (key != expect_key)
    throw ParseError("checkpoint: expected key '" + expect_key + "', got '" + key + "'");
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = read_double(is);
  return m;
}

void expect_token(std::istream& is, const std::string& expect) {
  std::string tok;
  if (!(is >> tok) || tok != expect)
    throw ParseError("checkpoint: expected '" + expect + "', got '" + tok + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const FeatureExtractor& model,
                     const ClassifierHead& head, int session) {
  std::ofstream os(path);
  if (!os) throw RunArtifactError("cannot open checkpoint for writing: " + path);
  os << "trips-checkpoint v1\n";
  os << "session " << session << '\n';
  os << "input_dim " << model.input_dim() << '\n';
  os << "feature_dim " << model.feature_dim() << '\n';
  os << "layers " << model.layers().size() << '\n';
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const AffineLayer& layer = model.layers()[l];
    os << "layer " << l << ' ' << activation_name(layer.act) << '\n';
    write_matrix(os, "W", layer.weight.value());
    write_matrix(os, "b", layer.bias.value());
  }
  const BatchNormState& bn = model.norm();
  os << "norm " << (bn.enabled ? 1 : 0) << ' ';
  write_double(os, bn.momentum);
  os << ' ';
  write_double(os, bn.eps);
  os << '\n';
  if (bn.enabled) {
    write_matrix(os, "gamma", bn.gamma.value());
    write_matrix(os, "beta", bn.beta.value());
    Matrix rm(1, static_cast<int>(bn.running_mean.size()));
    Matrix rv(1, static_cast<int>(bn.running_var.size()));
    rm.set_row(0, bn.running_mean);
    rv.set_row(0, bn.running_var);
    write_matrix(os, "running_mean", rm);
    write_matrix(os, "running_var", rv);
  }
  const std::vector<int> classes = head.registered();
  os << "head " << head.feature_dim() << ' ' << classes.size() << '\n';
  for (int id : classes) {
    os << "class " << id << '\n';
    write_matrix(os, "w", head.row(id).weight.value());
    write_matrix(os, "b", head.row(id).bias.value());
  }
  if (!os) throw RunArtifactError("checkpoint write failed: " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw RunArtifactError("cannot open checkpoint: " + path);
  expect_token(is, "trips-checkpoint");
  expect_token(is, "v1");
  LoadedModel out;
  expect_token(is, "session");
  is >> out.session;
  expect_token(is, "input_dim");
  int input_dim = 0;
  is >> input_dim;
  expect_token(is, "feature_dim");
  int feature_dim = 0;
  is >> feature_dim;
  expect_token(is, "layers");
  std::size_t n_layers = 0;
  is >> n_layers;

  FeatureExtractorConfig cfg;  // only for skeleton; tensors overwritten below
  cfg.input_dim = input_dim;
  cfg.feature_dim = feature_dim;
  cfg.hidden.clear();

  FeatureExtractor fx;
  linalg::Rng dummy(0);
  fx = FeatureExtractor::build(cfg, dummy);
  fx.layers().clear();
  for (std::size_t l = 0; l < n_layers; ++l) {
    expect_token(is, "layer");
    std::size_t idx;
    std::string act;
    is >> idx >> act;
    AffineLayer layer;
    layer.act = activation_from_name(act);
    layer.weight = Tensor(read_matrix(is, "W"));
    layer.bias = Tensor(read_matrix(is, "b"));
    fx.layers().push_back(std::move(layer));
  }
  expect_token(is, "norm");
  int enabled = 0;
  is >> enabled;
  BatchNormState& bn = fx.norm();
  bn.enabled = enabled != 0;
  bn.momentum = read_double(is);
  bn.eps = read_double(is);
  if (bn.enabled) {
    bn.gamma = Tensor(read_matrix(is, "gamma"));
    bn.beta = Tensor(read_matrix(is, "beta"));
    Matrix rm = read_matrix(is, "running_mean");
    Matrix rv = read_matrix(is, "running_var");
    bn.running_mean = rm.row(0);
    bn.running_var = rv.row(0);
  } else {
    bn.running_mean.assign(feature_dim, 0.0);
    bn.running_var.assign(feature_dim, 1.0);
    bn.gamma = Tensor(Matrix(1, feature_dim, 1.0));
    bn.beta = Tensor(Matrix(1, feature_dim, 0.0));
  }

  expect_token(is, "head");
  int head_dim = 0;
  std::size_t n_classes = 0;
  is >> head_dim >> n_classes;
  ClassifierHead head(head_dim);
  linalg::Rng unused(0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    expect_token(is, "class");
    int id = 0;
    is >> id;
    expand_head(head, {id}, unused, HeadInit::zero, 0.0);
    head.row(id).weight = Tensor(read_matrix(is, "w"));
    head.row(id).bias = Tensor(read_matrix(is, "b"));
  }
  if (!is) throw ParseError("checkpoint: truncated file " + path);
  out.extractor = std::move(fx);
  out.head = std::move(head);
  return out;
}

}  // namespace trips::net
