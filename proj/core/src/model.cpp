#include "nckd/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "nckd/error.hpp"
#include "nckd/io.hpp"

namespace nckd {

using nlohmann::json;

const char* to_string(HeadMode mode) {
  return mode == HeadMode::Linear ? "linear" : "nc3";
}

HeadMode head_mode_from_string(const std::string& name) {
  if (name == "linear") return HeadMode::Linear;
  if (name == "nc3") return HeadMode::Nc3Centroid;
  throw ContractViolation("unknown head mode '" + name + "' (expected linear or nc3)");
}

std::vector<std::size_t> Mlp::widths() const {
  std::vector<std::size_t> w{input_dim()};
  for (const auto& layer : hidden) w.push_back(layer.weight.rows());
  w.push_back(classes());
  return w;
}

namespace {

Matrix he_matrix(std::size_t rows, std::size_t cols, double variance, Rng& rng) {
  Matrix m(rows, cols);
  const double scale = std::sqrt(variance);
  for (double& v : m.flat()) v = scale * rng.gaussian();
  return m;
}

Matrix dense_forward(const Matrix& x, const Matrix& weight, const Vector& bias) {
  Matrix out = matmul_bt(x, weight);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  return out;
}

Vector column_sums(const Matrix& m) {
  Vector s(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += row[j];
  }
  return s;
}

void add_into(std::optional<Matrix>& slot, const Matrix& g) {
  if (slot) {
    axpy(1.0, g, *slot);
  } else {
    slot = g;
  }
}

}  // namespace

Mlp init_mlp(const LayerSpec& spec, Rng& rng) {
  if (spec.input == 0 || spec.classes == 0 || spec.hidden.empty())
    throw ContractViolation("init_mlp: widths must be positive with at least one hidden layer");
  Mlp m;
  std::size_t fan_in = spec.input;
  for (std::size_t width : spec.hidden) {
    if (width == 0) throw ContractViolation("init_mlp: zero hidden width");
    m.hidden.push_back({he_matrix(width, fan_in, 2.0 / static_cast<double>(fan_in), rng),
                        Vector(width, 0.0)});
    fan_in = width;
  }
  m.head.mode = HeadMode::Linear;
  m.head.weight = he_matrix(spec.classes, fan_in, 2.0 / static_cast<double>(fan_in), rng);
  m.head.bias.assign(spec.classes, 0.0);
  m.feature_layer = m.hidden.size() - 1;
  return m;
}

void attach_projector(Mlp& m, std::size_t layer, std::size_t out_dim, Rng& rng) {
  if (layer >= m.hidden.size()) throw ContractViolation("attach_projector: no such hidden layer");
  if (out_dim == 0) throw ContractViolation("attach_projector: zero output width");
  m.feature_layer = layer;
  const std::size_t in_dim = m.width(layer);
  if (in_dim == out_dim) {
    m.projector.reset();
    return;
  }
  m.projector = Projector{he_matrix(out_dim, in_dim, 1.0 / static_cast<double>(in_dim), rng)};
}

void retract_projector(Mlp& m) {
  if (!m.projector) return;
  Matrix& w = m.projector->weight;
  const bool tall = w.rows() >= w.cols();
  const SymmetricEigen e = eigen_symmetric(tall ? matmul_at(w, w) : matmul_bt(w, w));
  const std::size_t n = e.values.size();
  Matrix inv_sqrt(n, n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    if (!(e.values[c] > 0.0)) throw NumericError("retract_projector: projector lost rank");
    const double s = 1.0 / std::sqrt(e.values[c]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) inv_sqrt(i, j) += s * e.vectors(i, c) * e.vectors(j, c);
  }
  w = tall ? matmul(w, inv_sqrt) : matmul(inv_sqrt, w);
}

Matrix head_logits(const ClassifierHead& head, const Matrix& features) {
  if (head.mode == HeadMode::Linear) return dense_forward(features, head.weight, head.bias);
  Matrix logits = matmul_bt(features, head.centroids);
  for (double& v : logits.flat()) v *= head.scale;
  return logits;
}

ForwardCache forward(const Mlp& m, const Matrix& x) {
  if (x.cols() != m.input_dim())
    throw ContractViolation("forward: input width " + std::to_string(x.cols()) +
                            " does not match network input " + std::to_string(m.input_dim()));
  ForwardCache cache;
  cache.input = x;
  const Matrix* current = &cache.input;
  for (const auto& layer : m.hidden) {
    cache.pre.push_back(dense_forward(*current, layer.weight, layer.bias));
    Matrix act = cache.pre.back();
    for (double& v : act.flat()) v = v > 0.0 ? v : 0.0;
    cache.act.push_back(std::move(act));
    current = &cache.act.back();
  }
  const Matrix& source = cache.act.at(m.feature_layer);
  cache.projected = m.projector ? matmul_bt(source, m.projector->weight) : source;
  cache.logits = head_logits(m.head, cache.penultimate());
  return cache;
}

MlpGrads backward(const Mlp& m, const ForwardCache& cache, const Upstream& upstream) {
  const std::size_t layers = m.hidden.size();
  if (cache.act.size() != layers || cache.pre.size() != layers)
    throw ContractViolation("backward: cache does not come from a forward pass of this network");
  if (upstream.hidden.size() > layers)
    throw ContractViolation("backward: more hidden gradients than hidden layers");

  MlpGrads g;
  g.hidden.resize(layers);
  std::vector<std::optional<Matrix>> d_act(layers);
  for (std::size_t l = 0; l < upstream.hidden.size(); ++l)
    if (upstream.hidden[l]) add_into(d_act[l], *upstream.hidden[l]);

  const Matrix& h = cache.penultimate();
  if (m.head.mode == HeadMode::Linear) {
    g.head_weight = Matrix(m.head.weight.rows(), m.head.weight.cols());
    g.head_bias.assign(m.head.bias.size(), 0.0);
  }
  if (upstream.logits) {
    const Matrix& dz = *upstream.logits;
    if (dz.rows() != h.rows() || dz.cols() != m.classes())
      throw ContractViolation("backward: logit gradient has the wrong shape");
    if (m.head.mode == HeadMode::Linear) {
      g.head_weight = matmul_at(dz, h);
      g.head_bias = column_sums(dz);
      add_into(d_act[layers - 1], matmul(dz, m.head.weight));
    } else {
      add_into(d_act[layers - 1], m.head.scale * matmul(dz, m.head.centroids));
    }
  }

  const Matrix& source = cache.act[m.feature_layer];
  if (m.projector) g.projector = Matrix(m.projector->weight.rows(), m.projector->weight.cols());
  if (upstream.projected) {
    const Matrix& dp = *upstream.projected;
    if (dp.rows() != source.rows() || dp.cols() != m.projected_dim())
      throw ContractViolation("backward: projected-feature gradient has the wrong shape");
    if (m.projector) {
      g.projector = matmul_at(dp, source);
      add_into(d_act[m.feature_layer], matmul(dp, m.projector->weight));
    } else {
      add_into(d_act[m.feature_layer], dp);
    }
  }

  for (std::size_t l = layers; l-- > 0;) {
    const DenseLayer& layer = m.hidden[l];
    DenseLayer& gl = g.hidden[l];
    if (!d_act[l]) {
      gl.weight = Matrix(layer.weight.rows(), layer.weight.cols());
      gl.bias.assign(layer.bias.size(), 0.0);
      continue;
    }
    Matrix d_pre = std::move(*d_act[l]);
    const auto pre = cache.pre[l].flat();
    auto dp = d_pre.flat();
    for (std::size_t i = 0; i < dp.size(); ++i)
      if (!(pre[i] > 0.0)) dp[i] = 0.0;
    const Matrix& input = l == 0 ? cache.input : cache.act[l - 1];
    gl.weight = matmul_at(d_pre, input);
    gl.bias = column_sums(d_pre);
    if (l > 0) add_into(d_act[l - 1], matmul(d_pre, layer.weight));
  }
  return g;
}

void set_nc3_head(Mlp& m, const Matrix& unit_rows, double scale) {
  if (!(scale > 0.0)) throw ContractViolation("set_nc3_head: scale must be positive");
  if (unit_rows.cols() != m.feature_dim())
    throw ContractViolation("set_nc3_head: centroid dimension " + std::to_string(unit_rows.cols()) +
                            " does not match feature dimension " +
                            std::to_string(m.feature_dim()));
  for (std::size_t r = 0; r < unit_rows.rows(); ++r)
    if (std::abs(norm(unit_rows.row(r)) - 1.0) > 1e-9)
      throw ContractViolation("set_nc3_head: centroid row is not unit-norm");
  m.head.mode = HeadMode::Nc3Centroid;
  m.head.centroids = unit_rows;
  m.head.scale = scale;
  m.head.weight = Matrix();
  m.head.bias.clear();
}

void set_nc3_head(Mlp& m, const CentroidSet& centroids, double scale) {
  set_nc3_head(m, centroids.normalized, scale);
}

const Matrix& classifier_rows(const Mlp& m) {
  return m.head.mode == HeadMode::Linear ? m.head.weight : m.head.centroids;
}

std::vector<std::span<double>> parameters(Mlp& m) {
  std::vector<std::span<double>> p;
  for (auto& layer : m.hidden) {
    p.push_back(layer.weight.flat());
    p.push_back(layer.bias);
  }
  if (m.head.mode == HeadMode::Linear) {
    p.push_back(m.head.weight.flat());
    p.push_back(m.head.bias);
  }
  if (m.projector) p.push_back(m.projector->weight.flat());
  return p;
}

std::vector<std::span<double>> parameters(MlpGrads& g, const Mlp& m) {
  std::vector<std::span<double>> p;
  for (auto& layer : g.hidden) {
    p.push_back(layer.weight.flat());
    p.push_back(layer.bias);
  }
  if (m.head.mode == HeadMode::Linear) {
    p.push_back(g.head_weight.flat());
    p.push_back(g.head_bias);
  }
  if (m.projector) p.push_back(g.projector->flat());
  return p;
}

std::vector<std::size_t> predict(const Mlp& m, const Matrix& x) {
  const ForwardCache cache = forward(m, x);
  std::vector<std::size_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = cache.logits.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows)
    throw ContractViolation("checkpoint: matrix has the wrong row count");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols)
      throw ContractViolation("checkpoint: matrix has the wrong column count");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j, std::size_t n) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != n) throw ContractViolation("checkpoint: vector has the wrong length");
  return v;
}

}  // namespace

std::string checkpoint_to_json(const Mlp& m, const CheckpointMeta& meta,
                               const Matrix& probe_inputs) {
  json doc;
  doc["format"] = "nckd-mlp/1";
  doc["meta"] = {{"widths", m.widths()},
                 {"activation", "relu"},
                 {"head_mode", to_string(m.head.mode)},
                 {"scale", m.head.scale},
                 {"seed", meta.seed},
                 {"config_hash", meta.config_hash},
                 {"feature_layer", m.feature_layer}};
  json hidden = json::array();
  for (const auto& layer : m.hidden)
    hidden.push_back({{"weight", matrix_json(layer.weight)}, {"bias", layer.bias}});
  doc["params"]["hidden"] = std::move(hidden);
  if (m.head.mode == HeadMode::Linear) {
    doc["params"]["head"] = {{"weight", matrix_json(m.head.weight)}, {"bias", m.head.bias}};
  } else {
    doc["params"]["head"] = {{"centroids", matrix_json(m.head.centroids)}};
  }
  doc["params"]["projector"] = m.projector ? matrix_json(m.projector->weight) : json(nullptr);
  doc["probe"] = {{"inputs", matrix_json(probe_inputs)},
                  {"logits", matrix_json(forward(m, probe_inputs).logits)}};
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "nckd-mlp/1") throw ContractViolation("checkpoint: unknown format");
    const auto& meta = doc.at("meta");
    const auto widths = meta.at("widths").get<std::vector<std::size_t>>();
    if (widths.size() < 3) throw ContractViolation("checkpoint: need at least one hidden layer");
    if (meta.at("activation") != "relu") throw ContractViolation("checkpoint: unsupported activation");

    Checkpoint ck;
    Mlp& m = ck.model;
    const auto& params = doc.at("params");
    for (std::size_t l = 0; l + 2 < widths.size(); ++l) {
      const auto& layer = params.at("hidden").at(l);
      m.hidden.push_back({matrix_from_json(layer.at("weight"), widths[l + 1], widths[l]),
                          vector_from_json(layer.at("bias"), widths[l + 1])});
    }
    const std::size_t feat = widths[widths.size() - 2];
    const std::size_t classes = widths.back();
    m.head.mode = head_mode_from_string(meta.at("head_mode").get<std::string>());
    m.head.scale = meta.at("scale").get<double>();
    if (m.head.mode == HeadMode::Linear) {
      m.head.weight = matrix_from_json(params.at("head").at("weight"), classes, feat);
      m.head.bias = vector_from_json(params.at("head").at("bias"), classes);
    } else {
      m.head.centroids = matrix_from_json(params.at("head").at("centroids"), classes, feat);
    }
    m.feature_layer = meta.at("feature_layer").get<std::size_t>();
    if (m.feature_layer >= m.hidden.size())
      throw ContractViolation("checkpoint: feature_layer out of range");
    const auto& proj = params.at("projector");
    if (!proj.is_null()) {
      const std::size_t in = m.width(m.feature_layer);
      m.projector = Projector{matrix_from_json(proj, proj.size(), in)};
    }
    ck.meta.seed = meta.at("seed").get<std::uint64_t>();
    ck.meta.config_hash = meta.at("config_hash").get<std::string>();

    const auto& probe = doc.at("probe");
    const std::size_t n = probe.at("inputs").size();
    ck.probe_inputs = matrix_from_json(probe.at("inputs"), n, widths.front());
    ck.probe_logits = matrix_from_json(probe.at("logits"), n, classes);
    return ck;
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Mlp& m, const CheckpointMeta& meta,
                     const Matrix& probe_inputs) {
  write_text(path, checkpoint_to_json(m, meta, probe_inputs));
}

Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ck = checkpoint_from_json(read_text(path));
  if (ck.probe_inputs.rows() > 0) {
    const Matrix logits = forward(ck.model, ck.probe_inputs).logits;
    const auto a = logits.flat();
    const auto b = ck.probe_logits.flat();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - b[i]) > 1e-12)
        throw NumericError("checkpoint " + path + ": probe logits do not reproduce");
  }
  return ck;
}

}  // namespace nckd
