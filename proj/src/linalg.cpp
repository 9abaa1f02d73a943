#include "trips/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace trips::linalg {

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < m.rows(); ++i) {
    if (static_cast<int>(rows[i].size()) != m.cols())
      throw ShapeError("from_rows: ragged row lengths");
    m.set_row(i, rows[i]);
  }
  return m;
}

Vector Matrix::row(int i) const {
  Vector v(cols_);
  std::memcpy(v.data(), data_.data() + static_cast<std::size_t>(i) * cols_, sizeof(double) * cols_);
  return v;
}

void Matrix::set_row(int i, const Vector& v) {
  std::memcpy(data_.data() + static_cast<std::size_t>(i) * cols_, v.data(), sizeof(double) * cols_);
}

bool same_shape(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) return false;
  return std::memcmp(a.data(), b.data(),
                     sizeof(double) * static_cast<std::size_t>(a.rows()) * a.cols()) == 0;
}

static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!same_shape(a, b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix r(a.rows(), a.cols());
  const std::size_t n = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t i = 0; i < n; ++i) r.data()[i] = a.data()[i] + b.data()[i];
  return r;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix r(a.rows(), a.cols());
  const std::size_t n = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t i = 0; i < n; ++i) r.data()[i] = a.data()[i] - b.data()[i];
  return r;
}

Matrix scale(const Matrix& a, double s) {
  Matrix r(a.rows(), a.cols());
  const std::size_t n = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t i = 0; i < n; ++i) r.data()[i] = a.data()[i] * s;
  return r;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix r(a.rows(), a.cols());
  const std::size_t n = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t i = 0; i < n; ++i) r.data()[i] = a.data()[i] * b.data()[i];
  return r;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix r(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols(); ++j) r(i, j) += aik * b(k, j);
    }
  }
  return r;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: inner dimensions differ");
  Matrix r(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      r(i, j) = acc;
    }
  }
  return r;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at: inner dimensions differ");
  Matrix r(a.cols(), b.cols());
  for (int k = 0; k < a.rows(); ++k) {
    for (int i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (int j = 0; j < b.cols(); ++j) r(i, j) += aki * b(k, j);
    }
  }
  return r;
}

Matrix transpose(const Matrix& a) {
  Matrix r(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
  return r;
}

Vector col_sum(const Matrix& a) {
  Vector s(a.cols(), 0.0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) s[j] += a(i, j);
  return s;
}

double frobenius(const Matrix& a) {
  double acc = 0.0;
  const std::size_t n = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i] * a.data()[i];
  return std::sqrt(acc);
}

double dot(const Vector& a, const Vector& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm_sq(const Vector& a) { return dot(a, a); }

Vector vsub(const Vector& a, const Vector& b) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

Vector vadd(const Vector& a, const Vector& b) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

Vector vscale(const Vector& a, double s) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * s;
  return r;
}

void axpy(double alpha, const Vector& x, Vector& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(const Vector& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(const Matrix& m) {
  const std::size_t n = static_cast<std::size_t>(m.rows()) * m.cols();
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(m.data()[i])) return false;
  return true;
}

SymMatrix::SymMatrix(int n, double fill)
    : n_(n), tri_(static_cast<std::size_t>(n) * (n + 1) / 2, fill) {}

SymMatrix SymMatrix::identity(int n) {
  SymMatrix s(n);
  for (int i = 0; i < n; ++i) s.set(i, i, 1.0);
  return s;
}

Matrix SymMatrix::dense() const {
  Matrix m(n_, n_);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) m(i, j) = at(i, j);
  return m;
}

SymMatrix sym_add(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw ShapeError("sym_add: dimension mismatch");
  SymMatrix r(a.dim());
  for (std::size_t i = 0; i < r.packed().size(); ++i)
    r.packed()[i] = a.packed()[i] + b.packed()[i];
  return r;
}

SymMatrix sym_scale(const SymMatrix& a, double s) {
  SymMatrix r(a.dim());
  for (std::size_t i = 0; i < r.packed().size(); ++i) r.packed()[i] = a.packed()[i] * s;
  return r;
}

double sym_frobenius(const SymMatrix& a) {
  double acc = 0.0;
  for (int i = 0; i < a.dim(); ++i)
    for (int j = 0; j < a.dim(); ++j) acc += a.at(i, j) * a.at(i, j);
  return std::sqrt(acc);
}

double sym_frobenius_diff(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw ShapeError("sym_frobenius_diff: dimension mismatch");
  double acc = 0.0;
  for (int i = 0; i < a.dim(); ++i)
    for (int j = 0; j < a.dim(); ++j) {
      const double d = a.at(i, j) - b.at(i, j);
      acc += d * d;
    }
  return std::sqrt(acc);
}

bool bit_equal(const SymMatrix& a, const SymMatrix& b) {
  return a.dim() == b.dim() &&
         std::memcmp(a.packed().data(), b.packed().data(),
                     sizeof(double) * a.packed().size()) == 0;
}

LowerTriangular::LowerTriangular(int n)
    : n_(n), tri_(static_cast<std::size_t>(n) * (n + 1) / 2, 0.0) {}

void LowerTriangular::set(int i, int j, double v) {
  if (j > i) throw DomainError("LowerTriangular: write above diagonal");
  tri_[pack(i, j)] = v;
}

Vector LowerTriangular::apply(const Vector& v) const {
  if (static_cast<int>(v.size()) != n_) throw ShapeError("LowerTriangular::apply: size mismatch");
  Vector y(n_, 0.0);
  for (int i = 0; i < n_; ++i) {
    double acc = 0.0;
    for (int j = 0; j <= i; ++j) acc += tri_[pack(i, j)] * v[j];
    y[i] = acc;
  }
  return y;
}

SymMatrix LowerTriangular::reconstruct() const {
  SymMatrix s(n_);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (int k = 0; k <= std::min(i, j); ++k) acc += at(i, k) * at(j, k);
      s.set(i, j, acc);
    }
  return s;
}

// Cholesky-Crout on the packed lower triangle. Returns false on a
// non-positive pivot instead of throwing, so the caller can escalate.
static bool try_factor(const SymMatrix& a, double jitter, LowerTriangular& out) {
  const int n = a.dim();
  out = LowerTriangular(n);
  for (int j = 0; j < n; ++j) {
    double diag = a.at(j, j) + jitter;
    for (int k = 0; k < j; ++k) diag -= out.at(j, k) * out.at(j, k);
    if (!(diag > 0.0)) return false;  // catches NaN as well
    const double ljj = std::sqrt(diag);
    out.set(j, j, ljj);
    for (int i = j + 1; i < n; ++i) {
      double acc = a.at(i, j);
      for (int k = 0; k < j; ++k) acc -= out.at(i, k) * out.at(j, k);
      out.set(i, j, acc / ljj);
    }
  }
  return true;
}

CholResult cholesky(const SymMatrix& a, double base_jitter) {
  CholResult res;
  if (try_factor(a, 0.0, res.factor)) {
    res.jitter_used = 0.0;
    res.attempts = 1;
    return res;
  }
  double jitter = base_jitter;
  for (int attempt = 0; attempt < 6; ++attempt) {
    ++res.attempts;
    if (try_factor(a, jitter, res.factor)) {
      res.jitter_used = jitter;
      return res;
    }
    jitter *= 10.0;
  }
  throw FactorizationFailure("cholesky: pivots non-positive after jitter escalation");
}

SymMatrix shrink(const SymMatrix& s, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("shrink: alpha outside [0,1]");
  SymMatrix r(s.dim());
  for (int i = 0; i < s.dim(); ++i)
    for (int j = 0; j <= i; ++j) {
      double v = (1.0 - alpha) * s.at(i, j);
      if (i == j) v += alpha;
      r.set(i, j, v);
    }
  return r;
}

Vector stable_softmax(const Vector& logits) {
  if (logits.empty()) throw DomainError("stable_softmax: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    double m = logits(i, 0);
    for (int j = 1; j < logits.cols(); ++j) m = std::max(m, logits(i, j));
    double sum = 0.0;
    for (int j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - m);
      sum += out(i, j);
    }
    for (int j = 0; j < logits.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

double Rng::uniform() {
  // 53-bit mantissa in [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw DomainError("uniform_int: empty range");
  const std::uint64_t range = static_cast<std::uint64_t>(hi) - lo + 1;
  const std::uint64_t limit = (~std::uint64_t{0} / range) * range;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<int>(x % range);
}

Vector sample_standard_normal(int d, Rng& rng) {
  if (d < 1) throw DomainError("sample_standard_normal: d < 1");
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  // splitmix64 absorb-and-finalize
  std::uint64_t z = 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t w : words) {
    z += w + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
  }
  return z;
}

}  // namespace trips::linalg
