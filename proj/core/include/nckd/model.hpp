#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nckd/geometry.hpp"
#include "nckd/numcore.hpp"

namespace nckd {

enum class HeadMode { Linear, Nc3Centroid };

const char* to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& name);

/// y = x·Wᵀ + b with W stored out×in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

/// Linear: logits = h·Wᵀ + b. Nc3Centroid: logits = scale·h·Cᵀ with unit rows C.
struct ClassifierHead {
  HeadMode mode = HeadMode::Linear;
  Matrix weight;
  Vector bias;
  Matrix centroids;
  double scale = 10.0;
};

/// Bias-free map from a hidden layer's activations into another feature space.
struct Projector {
  Matrix weight;  ///< d_out × d_in
};

struct LayerSpec {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;  ///< at least one ReLU layer
  std::size_t classes = 0;
};

/// Feedforward ReLU network whose last hidden activation is the penultimate
/// feature g(x). Any hidden layer may additionally feed a projector.
struct Mlp {
  std::vector<DenseLayer> hidden;
  ClassifierHead head;
  std::optional<Projector> projector;
  std::size_t feature_layer = 0;  ///< hidden layer feeding `projected`

  std::size_t input_dim() const { return hidden.front().weight.cols(); }
  std::size_t feature_dim() const { return hidden.back().weight.rows(); }
  std::size_t classes() const { return head.mode == HeadMode::Linear ? head.weight.rows() : head.centroids.rows(); }
  std::size_t width(std::size_t layer) const { return hidden.at(layer).weight.rows(); }
  std::size_t projected_dim() const {
    return projector ? projector->weight.rows() : width(feature_layer);
  }
  std::vector<std::size_t> widths() const;
};

/// He-initialized network: weights ~ N(0, 2/fan_in), biases zero.
Mlp init_mlp(const LayerSpec& spec, Rng& rng);

/// Adds a projector from hidden layer `layer` into `out_dim` dimensions, or
/// leaves the layer's activations as-is when the widths already agree.
/// Weights ~ N(0, 1/fan_in).
void attach_projector(Mlp& m, std::size_t layer, std::size_t out_dim, Rng& rng);

/// Replaces the projector weight by its polar factor, the nearest matrix with
/// orthonormal columns (or rows, when it narrows). No-op without a projector.
void retract_projector(Mlp& m);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;  ///< pre-activation per hidden layer
  std::vector<Matrix> act;  ///< post-ReLU per hidden layer
  Matrix projected;         ///< act[feature_layer] mapped through the projector
  Matrix logits;

  const Matrix& penultimate() const { return act.back(); }
};

ForwardCache forward(const Mlp& m, const Matrix& x);
Matrix head_logits(const ClassifierHead& head, const Matrix& features);

/// Gradients arriving at the network outputs. Any entry may be absent.
struct Upstream {
  std::optional<Matrix> logits;
  std::optional<Matrix> projected;
  std::vector<std::optional<Matrix>> hidden;  ///< on act[l]; may be shorter than the layer count
};

struct MlpGrads {
  std::vector<DenseLayer> hidden;
  Matrix head_weight;  ///< empty in Nc3Centroid mode
  Vector head_bias;
  std::optional<Matrix> projector;
};

/// Exact reverse-mode gradients for every trainable parameter. Centroid rows
/// of an Nc3Centroid head are not trainable and receive nothing.
MlpGrads backward(const Mlp& m, const ForwardCache& cache, const Upstream& upstream);

/// Switches the head to Nc3Centroid using the normalized rows of `centroids`.
void set_nc3_head(Mlp& m, const CentroidSet& centroids, double scale);
void set_nc3_head(Mlp& m, const Matrix& unit_rows, double scale);

/// Classifier rows used by NC3: W for Linear, the centroid rows otherwise.
const Matrix& classifier_rows(const Mlp& m);

/// Trainable parameters and matching gradients, flattened in one fixed order.
std::vector<std::span<double>> parameters(Mlp& m);
std::vector<std::span<double>> parameters(MlpGrads& g, const Mlp& m);

std::vector<std::size_t> predict(const Mlp& m, const Matrix& x);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct Checkpoint {
  Mlp model;
  CheckpointMeta meta;
  Matrix probe_inputs;
  Matrix probe_logits;
};

/// JSON text with metadata, row-major parameter arrays and a probe batch
/// whose logits are stored for reload verification.
std::string checkpoint_to_json(const Mlp& m, const CheckpointMeta& meta, const Matrix& probe_inputs);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const Mlp& m, const CheckpointMeta& meta,
                     const Matrix& probe_inputs);
/// Reloads a checkpoint and checks that the probe logits reproduce within 1e-12.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nckd
