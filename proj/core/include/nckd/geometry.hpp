#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nckd/numcore.hpp"

namespace nckd {

/// Per-class feature means and their globally centered, unit-normalized form.
struct CentroidSet {
  Matrix class_means;  ///< K×d, row k is h_k
  Vector global_mean;  ///< h_G = mean of the class means
  Matrix normalized;   ///< K×d, row k is (h_k − h_G) / ‖h_k − h_G‖
  std::vector<std::size_t> counts;
  bool balanced = true;

  std::size_t k() const noexcept { return class_means.rows(); }
  std::size_t dim() const noexcept { return class_means.cols(); }
};

/// Class means of `features` grouped by `labels` (classes 0..k-1).
///
/// Each coordinate is summed over the class's values in sorted order, so the
/// result does not depend on the order samples are presented in.
/// Throws DegenerateInput for an empty class and DegenerateCentroid when a
/// class mean coincides with the global mean.
CentroidSet class_means(const Matrix& features, std::span<const std::size_t> labels,
                        std::size_t k);

/// Centers rows by their mean and normalizes each to unit length.
/// Throws DegenerateCentroid naming the offending row.
Matrix normalize_centered(const Matrix& means);

/// Chain rule through normalize_centered: maps a gradient on the normalized
/// rows to a gradient on the raw means.
Matrix normalize_centered_backward(const Matrix& means, const Matrix& d_normalized);

/// K unit rows in R^d with pairwise inner products −1/(K−1), rotated by a
/// random orthonormal frame drawn from rng. Requires d ≥ K−1.
Matrix make_simplex_etf(std::size_t k, std::size_t d, Rng& rng);

/// The K×K Gram matrix of a simplex ETF: (K/(K−1))(I − 11ᵀ/K).
struct EtfTarget {
  std::size_t k = 0;
  Matrix matrix;
};

EtfTarget etf_target(std::size_t k);

struct PcaResult {
  Matrix coords;            ///< n×dims projected coordinates
  Matrix components;        ///< dims×d principal axes (rows)
  Vector explained_variance;
  double explained_fraction = 0.0;  ///< share of total variance kept
};

/// Projection of the centered rows of `features` onto the leading `dims`
/// principal axes. Each axis is signed so its largest-magnitude loading is
/// positive.
PcaResult pca_project(const Matrix& features, std::size_t dims);

}  // namespace nckd
