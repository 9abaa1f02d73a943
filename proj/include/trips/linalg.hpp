#ifndef TRIPS_LINALG_HPP_
#define TRIPS_LINALG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

#include "trips/errors.hpp"

// Dense row-major kernels shared by every other module. Feature dimensions
// stay small (<= 512), so everything is plain loops; no BLAS.
namespace trips::linalg {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);
  static Matrix identity(int n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  Vector row(int i) const;
  void set_row(int i, const Vector& v);

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

bool same_shape(const Matrix& a, const Matrix& b);
bool bit_equal(const Matrix& a, const Matrix& b);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix matmul(const Matrix& a, const Matrix& b);           // a (n x k) * b (k x m)
Matrix matmul_bt(const Matrix& a, const Matrix& b);        // a (n x k) * b^T, b (m x k)
Matrix matmul_at(const Matrix& a, const Matrix& b);        // a^T (k x n) * b (n x m)
Matrix transpose(const Matrix& a);
Vector col_sum(const Matrix& a);
double frobenius(const Matrix& a);

// Vector helpers
double dot(const Vector& a, const Vector& b);
double norm_sq(const Vector& a);
Vector vsub(const Vector& a, const Vector& b);
Vector vadd(const Vector& a, const Vector& b);
Vector vscale(const Vector& a, double s);
void axpy(double alpha, const Vector& x, Vector& y);  // y += alpha * x
bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

// Symmetric matrix with a single packed storage for both halves, so
// A[i][j] == A[j][i] holds exactly by construction.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int n, double fill = 0.0);
  static SymMatrix identity(int n);

  int dim() const { return n_; }
  double at(int i, int j) const { return tri_[pack(i, j)]; }
  void set(int i, int j, double v) { tri_[pack(i, j)] = v; }
  void add_at(int i, int j, double v) { tri_[pack(i, j)] += v; }

  Matrix dense() const;
  const std::vector<double>& packed() const { return tri_; }
  std::vector<double>& packed() { return tri_; }

 private:
  std::size_t pack(int i, int j) const {
    if (i < j) std::swap(i, j);
    return static_cast<std::size_t>(i) * (i + 1) / 2 + j;
  }
  int n_ = 0;
  std::vector<double> tri_;
};

SymMatrix sym_add(const SymMatrix& a, const SymMatrix& b);
SymMatrix sym_scale(const SymMatrix& a, double s);
double sym_frobenius(const SymMatrix& a);
double sym_frobenius_diff(const SymMatrix& a, const SymMatrix& b);
bool bit_equal(const SymMatrix& a, const SymMatrix& b);

// Lower-triangular factor; zero above the diagonal by construction.
class LowerTriangular {
 public:
  LowerTriangular() = default;
  explicit LowerTriangular(int n);

  int dim() const { return n_; }
  double at(int i, int j) const { return j > i ? 0.0 : tri_[pack(i, j)]; }
  void set(int i, int j, double v);

  // y = L * v
  Vector apply(const Vector& v) const;
  // L * L^T as a SymMatrix (for reconstruction checks)
  SymMatrix reconstruct() const;

 private:
  std::size_t pack(int i, int j) const { return static_cast<std::size_t>(i) * (i + 1) / 2 + j; }
  int n_ = 0;
  std::vector<double> tri_;
};

struct CholResult {
  LowerTriangular factor;
  double jitter_used = 0.0;  // 0 means the plain factorization succeeded
  int attempts = 1;
};

// Cholesky with jitter escalation: the plain factorization is tried first;
// on a non-positive pivot the diagonal gets jitter starting at `base_jitter`,
// escalating x10 at most 6 times. Throws FactorizationFailure after that.
CholResult cholesky(const SymMatrix& a, double base_jitter = 1e-10);

// (1 - alpha) * s + alpha * I. Throws DomainError if alpha is outside [0,1].
SymMatrix shrink(const SymMatrix& s, double alpha);

// Max-subtracted softmax; entries positive and summing to 1.
Vector stable_softmax(const Vector& logits);
// Row-wise variant over an n x k matrix.
Matrix softmax_rows(const Matrix& logits);

// Deterministic generator. Normal variates use the basic Box-Muller map
// (two uniforms -> one normal, no spare caching) over mt19937_64, so a
// fixed seed pins the whole stream regardless of call pattern.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                 // [0, 1)
  double normal();                  // N(0, 1)
  int uniform_int(int lo, int hi);  // inclusive, unbiased (bounded rejection)

 private:
  std::mt19937_64 engine_;
};

Vector sample_standard_normal(int d, Rng& rng);

// Seed mixing for deriving independent sub-streams (splitmix64 over words).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);

}  // namespace trips::linalg

#endif  // TRIPS_LINALG_HPP_
