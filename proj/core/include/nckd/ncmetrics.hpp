#pragma once

#include <cstddef>
#include <span>

#include "nckd/geometry.hpp"
#include "nckd/numcore.hpp"

namespace nckd {

/// Within-class and between-class covariance of a labeled feature snapshot.
struct ScatterPair {
  Matrix sigma_w;
  Matrix sigma_b;
  bool balanced = true;
};

/// Σ_W = (1/n) Σ_i (h_i − h_{y_i})(h_i − h_{y_i})ᵀ and
/// Σ_B = (1/K) Σ_k (h_k − h_G)(h_k − h_G)ᵀ. With balanced classes n = NK.
ScatterPair scatter(const Matrix& features, std::span<const std::size_t> labels, std::size_t k);

/// Within-class variability relative to between-class spread,
/// (1/K)·Trace(Σ_W Σ_B⁺).
double nc1(const Matrix& features, std::span<const std::size_t> labels, std::size_t k);

/// Mean of |⟨h̃_k, h̃_k'⟩ + 1/(K−1)| over ordered pairs k ≠ k'.
double nc2(const CentroidSet& centroids);
double nc2(const Matrix& normalized_rows);

/// Mean of |cos(h̃_k, w_k)| over classes; 1 when the classifier is self-dual.
double nc3(const CentroidSet& centroids, const Matrix& classifier_rows);

struct NcReport {
  double nc1 = 0.0;
  double nc2 = 0.0;
  double nc3 = 0.0;
  std::size_t k = 0;
  std::size_t d = 0;
  bool balanced = true;
};

NcReport nc_report(const Matrix& features, std::span<const std::size_t> labels, std::size_t k,
                   const Matrix& classifier_rows);

}  // namespace nckd
