#include "nckd/ncmetrics.hpp"

#include <cmath>
#include <string>

#include "nckd/error.hpp"

namespace nckd {

ScatterPair scatter(const Matrix& features, std::span<const std::size_t> labels, std::size_t k) {
  if (k < 2) throw DegenerateInput("scatter: need at least two classes");
  const CentroidSet cs = class_means(features, labels, k);
  const std::size_t d = features.cols();
  const std::size_t n = features.rows();

  ScatterPair out{Matrix(d, d), Matrix(d, d), cs.balanced};
  Vector diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mean = cs.class_means.row(labels[i]);
    for (std::size_t j = 0; j < d; ++j) diff[j] = features(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      if (diff[a] == 0.0) continue;
      auto row = out.sigma_w.row(a);
      for (std::size_t b = 0; b < d; ++b) row[b] += diff[a] * diff[b];
    }
  }
  for (double& v : out.sigma_w.flat()) v /= static_cast<double>(n);

  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) diff[j] = cs.class_means(c, j) - cs.global_mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      auto row = out.sigma_b.row(a);
      for (std::size_t b = 0; b < d; ++b) row[b] += diff[a] * diff[b];
    }
  }
  for (double& v : out.sigma_b.flat()) v /= static_cast<double>(k);
  return out;
}

double nc1(const Matrix& features, std::span<const std::size_t> labels, std::size_t k) {
  if (k < 2) throw DegenerateInput("nc1: need at least two classes");
  const CentroidSet cs = class_means(features, labels, k);
  const std::size_t d = features.cols();
  const std::size_t n = features.rows();

  // With D the K×d centered means over √K, Σ_B = DᵀD and
  // Σ_B⁺ = Dᵀ(DDᵀ)⁺²D, so only K×K matrices are inverted.
  Matrix dm(k, d);
  const double root_k = std::sqrt(static_cast<double>(k));
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j)
      dm(c, j) = (cs.class_means(c, j) - cs.global_mean[j]) / root_k;
  const Matrix s_pinv = pinv(matmul_bt(dm, dm));
  const Matrix s_pinv2 = matmul(s_pinv, s_pinv);

  // D Σ_W Dᵀ = (1/n) Σ_i (D δ_i)(D δ_i)ᵀ with δ_i the offset from the class mean.
  Matrix delta(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mean = cs.class_means.row(labels[i]);
    for (std::size_t j = 0; j < d; ++j) delta(i, j) = features(i, j) - mean[j];
  }
  const Matrix proj = matmul_bt(delta, dm);
  Matrix within = matmul_at(proj, proj);
  for (double& v : within.flat()) v /= static_cast<double>(n);

  double tr = 0.0;
  const auto a = within.flat();
  const auto b = s_pinv2.flat();
  for (std::size_t i = 0; i < a.size(); ++i) tr += a[i] * b[i];
  return tr / static_cast<double>(k);
}

double nc2(const Matrix& normalized_rows) {
  const std::size_t k = normalized_rows.rows();
  if (k < 2) throw DegenerateInput("nc2: need at least two classes");
  const double offset = 1.0 / (static_cast<double>(k) - 1.0);
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      if (a != b) total += std::abs(dot(normalized_rows.row(a), normalized_rows.row(b)) + offset);
  return total / static_cast<double>(k * (k - 1));
}

double nc2(const CentroidSet& centroids) { return nc2(centroids.normalized); }

double nc3(const CentroidSet& centroids, const Matrix& classifier_rows) {
  const std::size_t k = centroids.k();
  if (classifier_rows.rows() != k || classifier_rows.cols() != centroids.dim())
    throw ContractViolation("nc3: classifier shape does not match centroids");
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (norm(classifier_rows.row(c)) == 0.0)
      throw DegenerateInput("nc3: classifier row " + std::to_string(c) + " is zero");
    total += std::abs(cosine(centroids.normalized.row(c), classifier_rows.row(c)));
  }
  return total / static_cast<double>(k);
}

NcReport nc_report(const Matrix& features, std::span<const std::size_t> labels, std::size_t k,
                   const Matrix& classifier_rows) {
  const CentroidSet cs = class_means(features, labels, k);
  NcReport r;
  r.nc1 = nc1(features, labels, k);
  r.nc2 = nc2(cs);
  r.nc3 = nc3(cs, classifier_rows);
  r.k = k;
  r.d = features.cols();
  r.balanced = cs.balanced;
  return r;
}

}  // namespace nckd
