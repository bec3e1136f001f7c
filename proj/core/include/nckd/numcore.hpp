#pragma once

// Dense 64-bit linear algebra, seeded randomness and the handful of
// nonlinearities shared by the rest of the library.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace nckd {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Elementary operations. Shape mismatches throw ContractViolation.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);
/// a += s · b
void axpy(double s, const Matrix& b, Matrix& a);
double frobenius_norm(const Matrix& m);
double trace(const Matrix& m);
bool all_finite(std::span<const double> values);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

struct SymmetricEigen {
  Vector values;   ///< unsorted, matches column order of vectors
  Matrix vectors;  ///< columns are orthonormal eigenvectors
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Iterates until the
/// off-diagonal Frobenius norm falls below 1e-12 of the matrix Frobenius norm.
SymmetricEigen eigen_symmetric(const Matrix& m);

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues below
/// rel_tol × (largest eigenvalue) are treated as zero.
Matrix pinv(const Matrix& m, double rel_tol = 1e-10);

/// σ(z / temperature), computed with max-subtraction.
Vector softmax(std::span<const double> z, double temperature = 1.0);
/// log σ(z / temperature)
Vector log_softmax(std::span<const double> z, double temperature = 1.0);

/// a·b / (‖a‖‖b‖). Throws DegenerateInput on a zero-norm argument.
double cosine(std::span<const double> a, std::span<const double> b);

/// Counter-based generator: output i of a stream is a pure function of
/// (key, i), so substreams split by label never interact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

  /// Independent substream derived from this stream's key and a label.
  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double gaussian();

  std::uint64_t key() const noexcept { return key_; }

 private:
  struct FromKey {};
  Rng(FromKey, std::uint64_t key) : key_(key) {}
  static std::uint64_t mix(std::uint64_t x);

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// n standard-normal variates drawn from rng.
Vector rng_gaussian(Rng& rng, std::size_t n);

/// Fisher–Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

}  // namespace nckd
