#pragma once

// Training objectives. Every loss returns its value together with analytic
// gradients keyed by the name of the differentiable input.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "nckd/numcore.hpp"

namespace nckd {

struct LossValueGrad {
  double value = 0.0;
  std::map<std::string, Matrix> grads;

  const Matrix& grad(const std::string& name) const;
};

struct LossWeights {
  double lambda1 = 1.0;    ///< prototype-alignment term
  double lambda2 = 1.0;    ///< ETF-matching term
  double alpha = 0.0;      ///< optional logit KD term
  double tau_proto = 0.1;  ///< temperature of the prototype-alignment softmax
  double tau_kd = 4.0;     ///< temperature of the logit KD term

  /// Throws ContractViolation when a weight is negative or a temperature is not positive.
  void validate() const;
};

/// −log σ(logits)[label]; gradient "logits" = σ(logits) − onehot(label), 1×K.
LossValueGrad cross_entropy(std::span<const double> logits, std::size_t label);

/// Batch mean of cross_entropy over the rows of `logits`; gradient "logits" is B×K.
LossValueGrad cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

/// τ²·KL(σ(z_t/τ) ‖ σ(z_s/τ)); gradient "z_s" = τ(σ(z_s/τ) − σ(z_t/τ)).
/// Teacher logits are constants.
LossValueGrad kd_kl(std::span<const double> z_s, std::span<const double> z_t, double tau);

/// Batch mean of kd_kl over rows; gradient "z_s" is B×K.
LossValueGrad kd_kl(const Matrix& z_s, const Matrix& z_t, double tau);

/// Prototype alignment: batch mean of the cross-entropy of
/// softmax_k(cos(f_i, c_k)/τ) against the true class. Gradient "features" is
/// B×d; the centroids are constants.
LossValueGrad nc1_loss(const Matrix& student_feats, std::span<const std::size_t> labels,
                       const Matrix& teacher_centroids, double tau);

/// ‖H_s H_tᵀ − T‖²_F where T is the simplex-ETF Gram matrix. Rows of both
/// inputs must be unit-norm. Gradient "h_student" = 2 R H_t.
///
/// `num_classes` sets the off-diagonal target −1/(num_classes − 1); it
/// defaults to the row count and may be larger when only a subset of classes
/// is present.
LossValueGrad nc2_loss(const Matrix& h_student, const Matrix& h_teacher,
                       std::optional<std::size_t> num_classes = std::nullopt);

struct LossParts {
  LossValueGrad cls;
  std::optional<LossValueGrad> nc1;
  std::optional<LossValueGrad> nc2;
  std::optional<LossValueGrad> kd;
};

/// L_cls + λ1·L_NC1 + λ2·L_NC2 (+ α·L_KD when α > 0). Gradients sharing an
/// input name are summed in that order.
LossValueGrad total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace nckd
