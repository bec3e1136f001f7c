#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nckd/data.hpp"
#include "nckd/geometry.hpp"
#include "nckd/losses.hpp"
#include "nckd/model.hpp"
#include "nckd/ncmetrics.hpp"
#include "nckd/numcore.hpp"

namespace nckd {

enum class CentroidSource { Student, Teacher };

const char* to_string(CentroidSource source);
CentroidSource centroid_source_from_string(const std::string& name);

struct DistillConfig {
  LossWeights weights;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double ema_beta = 0.9;  ///< centroid tracker momentum
  HeadMode head = HeadMode::Linear;
  double head_scale = 10.0;
  CentroidSource centroid_source = CentroidSource::Student;
  /// Hidden layer whose (projected) activations feed the NC losses; the
  /// penultimate layer when unset.
  std::optional<std::size_t> distill_layer;
  /// Epochs at which the learning rate is multiplied by lr_factor. Empty
  /// means 60%, 75% and 90% of `epochs`.
  std::vector<std::size_t> milestones;
  double lr_factor = 0.1;
  /// Use the teacher's centered, normalized centroids as prototypes instead
  /// of the raw class means.
  bool proto_centered = false;
  /// Keep the projector an isometry by retracting it after every step.
  bool isometric_projector = true;
  /// Record per-epoch wall-clock seconds; otherwise `secs` stays 0 so logs
  /// are byte-reproducible.
  bool log_wallclock = false;

  void validate() const;
  std::vector<std::size_t> resolved_milestones() const;
  double lr_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_cls = 0.0;
  double loss_nc1 = 0.0;
  double loss_nc2 = 0.0;
  double loss_kd = 0.0;
  double loss_total = 0.0;
  double acc_train = 0.0;
  double acc_test = 0.0;
  double nc1 = 0.0;  ///< NC metrics of the penultimate features on the test split
  double nc2 = 0.0;
  double nc3 = 0.0;
  double secs = 0.0;  ///< training time of the epoch, evaluation excluded
};

struct TrainLog {
  std::vector<EpochRecord> records;

  /// One JSON object per line with the EpochRecord field names.
  std::string to_jsonl() const;
};

/// classic momentum: v ← μv + (g + λp); p ← p − lr·v.
void sgd_step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads,
              std::vector<std::vector<double>>& velocity, double lr, double momentum,
              double weight_decay);

/// Running per-class feature means with exponential decay β, updated from
/// mini-batches. Only classes seen at least once contribute rows.
class CentroidTracker {
 public:
  CentroidTracker(std::size_t k, std::size_t d, double beta);

  /// μ_c ← βμ_c + (1−β)·mean_c(batch) for every class present in the batch;
  /// the first update of a class copies the batch mean.
  void update(const Matrix& feats, std::span<const std::size_t> labels);

  std::size_t k() const noexcept { return means_.rows(); }
  bool seen(std::size_t c) const { return counts_[c] > 0; }
  bool all_seen() const;
  std::vector<std::size_t> seen_classes() const;
  const Matrix& means() const noexcept { return means_; }
  const std::vector<std::size_t>& update_counts() const noexcept { return counts_; }

  /// Rows of seen classes, centered by their mean and unit-normalized.
  Matrix normalized() const;

  /// Gradient on the last batch's features given a gradient on normalized().
  /// Only the last batch's contribution to each running mean is differentiated.
  Matrix backprop(const Matrix& d_normalized, const Matrix& batch_feats,
                  std::span<const std::size_t> labels) const;

 private:
  double beta_;
  Matrix means_;
  std::vector<std::size_t> counts_;
  std::vector<double> last_coeff_;  ///< ∂μ_c/∂(batch mean) of the last update
  std::vector<std::size_t> last_batch_count_;
};

/// Teacher-side constants of the distillation objective, in projected space.
struct DistillTargets {
  Matrix prototypes;      ///< K×D centers of the prototype-alignment term
  Matrix teacher_normed;  ///< K×D normalized teacher centroids H̃^T
};

struct BatchObjective {
  double cls = 0.0;
  double nc1 = 0.0;
  double nc2 = 0.0;
  double kd = 0.0;
  double total = 0.0;
  MlpGrads grads;  ///< empty when total is not finite
};

/// One mini-batch of the training objective: forward pass, tracker updates,
/// every enabled loss term and the backward pass. The prototype and ETF terms
/// need `targets`; the ETF term also needs `proj_tracker`; the KD term needs
/// `teacher_logits` (rows aligned with x). `head_tracker`, when given, is
/// updated with the penultimate features.
BatchObjective batch_objective(const Mlp& model, const Matrix& x, std::span<const std::size_t> labels,
                               const LossWeights& w, const DistillTargets* targets,
                               CentroidTracker* proj_tracker, CentroidTracker* head_tracker,
                               const Matrix* teacher_logits);

struct Evaluation {
  double accuracy = 0.0;
  NcReport report;
};

/// Top-1 accuracy plus NC metrics of the penultimate features, with the
/// network's classifier rows standing in for w_k.
Evaluation evaluate(const Mlp& m, const Dataset& data);

struct TrainResult {
  Mlp model;
  TrainLog log;
};

/// Cross-entropy training of a fresh network with SGD, momentum, weight
/// decay and step decay. Deterministic per cfg.seed.
TrainResult train_teacher(const LayerSpec& spec, const DistillConfig& cfg, const Dataset& train,
                          const Dataset& test);

/// Exact class means of the model's penultimate features over `data`.
CentroidSet extract_teacher_centroids(const Mlp& model, const Dataset& data);

struct Teacher {
  Mlp model;
  CentroidSet centroids;
};

/// Trains a student under L_cls + λ1·L_NC1 + λ2·L_NC2 (+ α·L_KD). With all
/// three weights zero this is plain cross-entropy training, step for step.
TrainResult distill(const Teacher& teacher, const LayerSpec& student_spec,
                    const DistillConfig& cfg, const Dataset& train, const Dataset& test);

struct UfmOptions {
  double init_scale = 1.0;
  /// Starting features (K·n_per_class rows, class-major); random when unset.
  std::optional<Matrix> init_features;
  /// When set, every feature is rescaled to this norm at the start and after
  /// each step (projected gradient descent on the sphere).
  std::optional<double> sphere_radius;
  std::size_t log_every = 50;
  /// Stop once both NC1 and NC2 fall below these values (0 disables).
  double stop_nc1 = 0.0;
  double stop_nc2 = 0.0;
};

struct UfmResult {
  Matrix features;
  std::vector<std::size_t> labels;
  TrainLog log;
  std::size_t steps_run = 0;
  double final_nc1 = 0.0;
  double final_nc2 = 0.0;
  double final_lr = 0.0;
};

/// Gradient descent on free per-sample features under λ1·L_NC1 + λ2·L_NC2
/// against a fixed teacher ETF. Class means are recomputed exactly each step.
/// A step that would raise the objective is retried with half the rate.
UfmResult ufm_optimize(std::size_t k, std::size_t d, std::size_t n_per_class,
                       const Matrix& teacher_etf, const LossWeights& weights, std::size_t steps,
                       double lr, Rng& rng, const UfmOptions& options = {});

}  // namespace nckd
