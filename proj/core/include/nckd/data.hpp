#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nckd/numcore.hpp"

namespace nckd {

struct Dataset {
  Matrix features;                  ///< n×d
  std::vector<std::size_t> labels;  ///< values in [0, k)
  std::size_t k = 0;
  std::vector<std::size_t> counts;  ///< samples per class
  bool balanced = true;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  /// Builds a dataset and computes counts/balancedness. Throws
  /// ContractViolation on out-of-range labels or non-finite features.
  static Dataset make(Matrix features, std::vector<std::size_t> labels, std::size_t k);
  /// Rows `indices` in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

enum class CenterPlacement { Etf, RandomOrthogonal };

struct MixtureSpec {
  std::size_t k = 10;
  std::size_t d = 32;
  std::size_t n_per_class = 300;
  double center_separation = 6.0;
  double within_class_std = 1.5;
  CenterPlacement placement = CenterPlacement::Etf;

  void validate() const;
};

/// Balanced isotropic Gaussian mixture; the class centers are either a
/// simplex ETF or orthonormal directions, scaled by the separation.
/// Samples are stored class-major.
Dataset gaussian_mixture(const MixtureSpec& spec, Rng& rng);
/// Class centers drawn from rng. gaussian_mixture draws them from its
/// "centers" substream.
Matrix mixture_centers(const MixtureSpec& spec, Rng& rng);

/// Parses "label,f0,f1,..." CSV. K is max label + 1.
Dataset load_csv(const std::string& path);
Dataset parse_csv(const std::string& text, const std::string& source = "<memory>");
/// Writes the CSV format read by load_csv, floats with 17 significant digits.
std::string to_csv(const Dataset& d);
void save_csv(const std::string& path, const Dataset& d);

struct Split {
  Dataset train;
  Dataset test;
};

/// Stratified split: round(test_fraction·N_k) samples of every class go to
/// the test side. Both sides keep the original relative order.
Split split(const Dataset& d, double test_fraction, Rng& rng);

/// Index batches covering one epoch. The final partial batch is kept.
std::vector<std::vector<std::size_t>> batches(const Dataset& d, std::size_t batch_size, Rng& rng,
                                              bool shuffle);

}  // namespace nckd
