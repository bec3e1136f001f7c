#include "nckd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nckd/error.hpp"

namespace nckd {

CentroidSet class_means(const Matrix& features, std::span<const std::size_t> labels,
                        std::size_t k) {
  if (labels.size() != features.rows())
    throw ContractViolation("class_means: label count differs from feature rows");
  if (k == 0) throw DegenerateInput("class_means: no classes");
  const std::size_t d = features.cols();

  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw ContractViolation("class_means: label out of range");
    members[labels[i]].push_back(i);
  }

  CentroidSet out;
  out.counts.resize(k);
  out.class_means = Matrix(k, d);
  std::vector<double> column;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& idx = members[c];
    if (idx.empty())
      throw DegenerateInput("class_means: class " + std::to_string(c) + " has no samples");
    out.counts[c] = idx.size();
    column.resize(idx.size());
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t n = 0; n < idx.size(); ++n) column[n] = features(idx[n], j);
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v;
      out.class_means(c, j) = s / static_cast<double>(idx.size());
    }
  }
  out.balanced = std::all_of(out.counts.begin(), out.counts.end(),
                             [&](std::size_t n) { return n == out.counts.front(); });

  out.global_mean.assign(d, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) out.global_mean[j] += out.class_means(c, j);
  for (double& v : out.global_mean) v /= static_cast<double>(k);

  out.normalized = normalize_centered(out.class_means);
  return out;
}

Matrix normalize_centered(const Matrix& means) {
  const std::size_t k = means.rows();
  const std::size_t d = means.cols();
  Vector global(d, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) global[j] += means(c, j);
  for (double& v : global) v /= static_cast<double>(k);

  Matrix out(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    auto row = out.row(c);
    for (std::size_t j = 0; j < d; ++j) row[j] = means(c, j) - global[j];
    const double len = norm(row);
    if (!(len > 0.0))
      throw DegenerateCentroid(c, "class " + std::to_string(c) +
                                      " mean coincides with the global mean");
    for (double& v : row) v /= len;
  }
  return out;
}

Matrix normalize_centered_backward(const Matrix& means, const Matrix& d_normalized) {
  const std::size_t k = means.rows();
  const std::size_t d = means.cols();
  if (d_normalized.rows() != k || d_normalized.cols() != d)
    throw ContractViolation("normalize_centered_backward: gradient shape mismatch");
  Vector global(d, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) global[j] += means(c, j);
  for (double& v : global) v /= static_cast<double>(k);

  // d/du of u/‖u‖ is (I − ĥĥᵀ)/‖u‖; centering subtracts the mean gradient.
  Matrix du(k, d);
  Vector centered(d);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) centered[j] = means(c, j) - global[j];
    const double len = norm(centered);
    if (!(len > 0.0))
      throw DegenerateCentroid(c, "class " + std::to_string(c) +
                                      " mean coincides with the global mean");
    const auto g = d_normalized.row(c);
    double along = 0.0;
    for (std::size_t j = 0; j < d; ++j) along += g[j] * centered[j] / len;
    auto out = du.row(c);
    for (std::size_t j = 0; j < d; ++j) out[j] = (g[j] - along * centered[j] / len) / len;
  }
  Vector mean_du(d, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) mean_du[j] += du(c, j);
  for (double& v : mean_du) v /= static_cast<double>(k);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) du(c, j) -= mean_du[j];
  return du;
}

namespace {

// Rows form an orthonormal basis of the complement of the all-ones vector in
// R^k (Helmert construction), returned as k×(k−1).
Matrix helmert_basis(std::size_t k) {
  Matrix b(k, k - 1);
  for (std::size_t j = 1; j < k; ++j) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(j * (j + 1)));
    for (std::size_t i = 0; i < j; ++i) b(i, j - 1) = scale;
    b(j, j - 1) = -static_cast<double>(j) * scale;
  }
  return b;
}

// r×d matrix with orthonormal rows from Gram–Schmidt on Gaussian draws.
Matrix random_orthonormal_rows(std::size_t r, std::size_t d, Rng& rng) {
  Matrix q(r, d);
  for (std::size_t i = 0; i < r; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 16) throw NumericError("random_orthonormal_rows: rank-deficient draws");
      auto row = q.row(i);
      for (double& v : row) v = rng.gaussian();
      // Two passes of modified Gram–Schmidt.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < i; ++p) {
          const double proj = dot(row, q.row(p));
          auto prev = q.row(p);
          for (std::size_t j = 0; j < d; ++j) row[j] -= proj * prev[j];
        }
      }
      const double len = norm(row);
      if (len > 1e-8) {
        for (double& v : row) v /= len;
        break;
      }
    }
  }
  return q;
}

}  // namespace

Matrix make_simplex_etf(std::size_t k, std::size_t d, Rng& rng) {
  if (k < 2) throw ContractViolation("make_simplex_etf: need at least two classes");
  if (d + 1 < k)
    throw DimensionError("make_simplex_etf: dimension " + std::to_string(d) +
                         " cannot hold a " + std::to_string(k) + "-class simplex");
  // √(K/(K−1))(I − 11ᵀ/K) restricted to its (K−1)-dimensional range, then
  // embedded into R^d by a random orthonormal frame.
  const Matrix basis = helmert_basis(k);
  const Matrix frame = random_orthonormal_rows(k - 1, d, rng);
  Matrix m = matmul(basis, frame);
  for (std::size_t c = 0; c < k; ++c) {
    auto row = m.row(c);
    const double len = norm(row);
    for (double& v : row) v /= len;
  }
  return m;
}

EtfTarget etf_target(std::size_t k) {
  if (k < 2) throw ContractViolation("etf_target: need at least two classes");
  const double kk = static_cast<double>(k);
  const double off = -1.0 / (kk - 1.0);
  EtfTarget t{k, Matrix(k, k, off)};
  for (std::size_t i = 0; i < k; ++i) t.matrix(i, i) = 1.0;
  return t;
}

PcaResult pca_project(const Matrix& features, std::size_t dims) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (dims > d)
    throw DimensionError("pca_project: " + std::to_string(dims) +
                         " components requested from " + std::to_string(d) + " features");
  if (n == 0) throw DegenerateInput("pca_project: no samples");

  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features(i, j);
  for (double& v : mean) v /= static_cast<double>(n);
  Matrix centered = features;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= mean[j];

  Matrix cov = matmul_at(centered, centered);
  for (double& v : cov.flat()) v /= static_cast<double>(n);
  const SymmetricEigen eig = eigen_symmetric(cov);

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return eig.values[a] > eig.values[b]; });

  PcaResult out;
  out.components = Matrix(dims, d);
  double total = 0.0;
  for (double v : eig.values) total += std::max(v, 0.0);
  double kept = 0.0;
  for (std::size_t c = 0; c < dims; ++c) {
    const std::size_t e = order[c];
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(eig.vectors(j, e)) > std::abs(eig.vectors(argmax, e))) argmax = j;
    const double sign = eig.vectors(argmax, e) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) out.components(c, j) = sign * eig.vectors(j, e);
    const double variance = std::max(eig.values[e], 0.0);
    out.explained_variance.push_back(variance);
    kept += variance;
  }
  out.explained_fraction = total > 0.0 ? kept / total : 0.0;
  out.coords = matmul_bt(centered, out.components);
  return out;
}

}  // namespace nckd
