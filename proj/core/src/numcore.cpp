#include "nckd/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "nckd/error.hpp"

namespace nckd {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<Vector> v;
  for (const auto& r : rows) v.emplace_back(r);
  return from_rows(v);
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw ContractViolation("from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimensions differ");
  const std::size_t n = a.rows();
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  Matrix out(n, m);
  const double* bp = b.flat().data();
  double* op = out.flat().data();
  // Four output rows share each pass over b; every entry still sums over k in order.
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* o0 = op + i * m;
    double* o1 = o0 + m;
    double* o2 = o1 + m;
    double* o3 = o2 + m;
    for (std::size_t k = 0; k < inner; ++k) {
      const double a0 = a(i, k), a1 = a(i + 1, k), a2 = a(i + 2, k), a3 = a(i + 3, k);
      const double* __restrict br = bp + k * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double bj = br[j];
        o0[j] += a0 * bj;
        o1[j] += a1 * bj;
        o2[j] += a2 * bj;
        o3[j] += a3 * bj;
      }
    }
  }
  for (; i < n; ++i) {
    double* __restrict o = op + i * m;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a(i, k);
      const double* __restrict br = bp + k * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ContractViolation("matmul_bt: inner dimensions differ");
  // Same summation order as a row-by-row dot, but the inner loop vectorizes.
  return matmul(a, transpose(b));
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ContractViolation("matmul_at: inner dimensions differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto a_row = a.row(k);
    auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator+");
  Matrix out = a;
  auto o = out.flat();
  auto bf = b.flat();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bf[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator-");
  Matrix out = a;
  auto o = out.flat();
  auto bf = b.flat();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bf[i];
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.flat()) v *= s;
  return out;
}

void axpy(double s, const Matrix& b, Matrix& a) {
  require_same_shape(a, b, "axpy");
  auto af = a.flat();
  auto bf = b.flat();
  for (std::size_t i = 0; i < af.size(); ++i) af[i] += s * bf[i];
}

double frobenius_norm(const Matrix& m) { return norm(m.flat()); }

double trace(const Matrix& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) t += m(i, i);
  return t;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

SymmetricEigen eigen_symmetric(const Matrix& m) {
  if (m.rows() != m.cols()) throw ContractViolation("eigen_symmetric: matrix is not square");
  if (!all_finite(m.flat())) throw NumericError("eigen_symmetric: non-finite entry");
  const std::size_t n = m.rows();
  Matrix a = m;
  Matrix v = Matrix::identity(n);
  const double total = frobenius_norm(a);
  auto off_diagonal = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  constexpr int kMaxSweeps = 100;
  int sweep = 0;
  for (; sweep < kMaxSweeps && off_diagonal() >= 1e-12 * total && total > 0.0; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == kMaxSweeps) throw NumericError("eigen_symmetric: Jacobi iteration did not converge");

  SymmetricEigen out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
  out.vectors = std::move(v);
  return out;
}

Matrix pinv(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) throw ContractViolation("pinv: matrix is not square");
  if (!all_finite(m.flat())) throw NumericError("pinv: non-finite entry");
  const std::size_t n = m.rows();
  const SymmetricEigen eig = eigen_symmetric(m);
  double largest = 0.0;
  for (double v : eig.values) largest = std::max(largest, v);
  const double cutoff = rel_tol * largest;

  Matrix out(n, n);
  if (largest <= 0.0) return out;
  for (std::size_t e = 0; e < n; ++e) {
    const double lambda = eig.values[e];
    if (lambda <= cutoff) continue;
    const double inv = 1.0 / lambda;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = eig.vectors(i, e) * inv;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * eig.vectors(j, e);
    }
  }
  return out;
}

Vector softmax(std::span<const double> z, double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("softmax: temperature must be positive");
  Vector out(z.size());
  if (z.empty()) return out;
  const double peak = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - peak) / temperature);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Vector log_softmax(std::span<const double> z, double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("log_softmax: temperature must be positive");
  Vector out(z.size());
  if (z.empty()) return out;
  const double peak = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = (z[i] - peak) / temperature;
    total += std::exp(out[i]);
  }
  const double log_total = std::log(total);
  for (double& v : out) v -= log_total;
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInput("cosine: zero-norm argument");
  // Product of norms is commutative, so the result is symmetric bit-for-bit.
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::uint64_t Rng::mix(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::split(std::string_view label) const {
  // FNV-1a over the label, then folded into the parent key.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return Rng(FromKey{}, mix(key_ ^ mix(h)));
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(FromKey{}, mix(key_ ^ mix(index + 0x243f6a8885a308d3ULL)));
}

std::uint64_t Rng::next_u64() { return mix(key_ + mix(counter_++)); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractViolation("Rng::below: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box–Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vector rng_gaussian(Rng& rng, std::size_t n) {
  Vector out(n);
  for (double& v : out) v = rng.gaussian();
  return out;
}

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace nckd
