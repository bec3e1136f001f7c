#include "nckd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>

#include "nckd/error.hpp"

namespace nckd {

const char* to_string(CentroidSource source) {
  return source == CentroidSource::Student ? "student" : "teacher";
}

CentroidSource centroid_source_from_string(const std::string& name) {
  if (name == "student") return CentroidSource::Student;
  if (name == "teacher") return CentroidSource::Teacher;
  throw ContractViolation("unknown centroid source '" + name + "' (expected student or teacher)");
}

void DistillConfig::validate() const {
  weights.validate();
  if (!(lr >= 0.0)) throw ContractViolation("DistillConfig: lr must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ContractViolation("DistillConfig: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ContractViolation("DistillConfig: weight_decay must be nonnegative");
  if (batch_size == 0) throw ContractViolation("DistillConfig: batch_size must be positive");
  if (!(ema_beta >= 0.0 && ema_beta < 1.0))
    throw ContractViolation("DistillConfig: ema_beta must lie in [0, 1)");
  if (!(head_scale > 0.0)) throw ContractViolation("DistillConfig: head_scale must be positive");
  if (!(lr_factor > 0.0)) throw ContractViolation("DistillConfig: lr_factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw ContractViolation("DistillConfig: milestones must be strictly increasing");
}

std::vector<std::size_t> DistillConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  std::vector<std::size_t> out;
  for (double frac : {0.6, 0.75, 0.9}) {
    const auto m = static_cast<std::size_t>(std::llround(frac * static_cast<double>(epochs)));
    if (m > 0 && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

double DistillConfig::lr_at(std::size_t epoch) const {
  double rate = lr;
  for (std::size_t m : resolved_milestones())
    if (epoch >= m) rate *= lr_factor;
  return rate;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const EpochRecord& r : records) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss_cls"] = r.loss_cls;
    j["loss_nc1"] = r.loss_nc1;
    j["loss_nc2"] = r.loss_nc2;
    j["loss_kd"] = r.loss_kd;
    j["loss_total"] = r.loss_total;
    j["acc_train"] = r.acc_train;
    j["acc_test"] = r.acc_test;
    j["nc1"] = r.nc1;
    j["nc2"] = r.nc2;
    j["nc3"] = r.nc3;
    j["secs"] = r.secs;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void sgd_step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads,
              std::vector<std::vector<double>>& velocity, double lr, double momentum,
              double weight_decay) {
  if (params.size() != grads.size())
    throw ContractViolation("sgd_step: parameter and gradient lists differ in length");
  if (velocity.empty()) {
    for (const auto& p : params) velocity.emplace_back(p.size(), 0.0);
  }
  if (velocity.size() != params.size())
    throw ContractViolation("sgd_step: optimizer state does not match parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto p = params[t];
    const auto g = grads[t];
    auto& v = velocity[t];
    if (g.size() != p.size() || v.size() != p.size())
      throw ContractViolation("sgd_step: shape mismatch in tensor " + std::to_string(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
      p[i] -= lr * v[i];
    }
  }
}

CentroidTracker::CentroidTracker(std::size_t k, std::size_t d, double beta)
    : beta_(beta), means_(k, d), counts_(k, 0), last_coeff_(k, 0.0), last_batch_count_(k, 0) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ContractViolation("CentroidTracker: beta must lie in [0, 1)");
}

void CentroidTracker::update(const Matrix& feats, std::span<const std::size_t> labels) {
  if (feats.rows() != labels.size() || feats.cols() != means_.cols())
    throw ContractViolation("CentroidTracker::update: batch shape mismatch");
  const std::size_t k = means_.rows();
  const std::size_t d = means_.cols();
  Matrix sums(k, d);
  std::fill(last_batch_count_.begin(), last_batch_count_.end(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw ContractViolation("CentroidTracker::update: label out of range");
    ++last_batch_count_[labels[i]];
    const auto row = feats.row(i);
    auto s = sums.row(labels[i]);
    for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    last_coeff_[c] = 0.0;
    const std::size_t n = last_batch_count_[c];
    if (n == 0) continue;
    auto mu = means_.row(c);
    const auto s = sums.row(c);
    const double coeff = counts_[c] == 0 ? 1.0 : 1.0 - beta_;
    const double keep = counts_[c] == 0 ? 0.0 : beta_;
    for (std::size_t j = 0; j < d; ++j) mu[j] = keep * mu[j] + coeff * (s[j] / static_cast<double>(n));
    last_coeff_[c] = coeff;
    ++counts_[c];
  }
}

bool CentroidTracker::all_seen() const {
  return std::all_of(counts_.begin(), counts_.end(), [](std::size_t n) { return n > 0; });
}

std::vector<std::size_t> CentroidTracker::seen_classes() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < counts_.size(); ++c)
    if (counts_[c] > 0) out.push_back(c);
  return out;
}

namespace {

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

Matrix CentroidTracker::normalized() const {
  const auto seen = seen_classes();
  return normalize_centered(gather_rows(means_, seen));
}

Matrix CentroidTracker::backprop(const Matrix& d_normalized, const Matrix& batch_feats,
                                 std::span<const std::size_t> labels) const {
  const auto seen = seen_classes();
  const Matrix d_means = normalize_centered_backward(gather_rows(means_, seen), d_normalized);
  Matrix d_feats(batch_feats.rows(), batch_feats.cols());
  std::vector<std::size_t> slot(means_.rows(), seen.size());
  for (std::size_t r = 0; r < seen.size(); ++r) slot[seen[r]] = r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    if (slot[c] == seen.size() || last_batch_count_[c] == 0) continue;
    const double scale = last_coeff_[c] / static_cast<double>(last_batch_count_[c]);
    const auto src = d_means.row(slot[c]);
    auto dst = d_feats.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = scale * src[j];
  }
  return d_feats;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double accuracy_of(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

NcReport report_or_nan(const Matrix& features, std::span<const std::size_t> labels, std::size_t k,
                       const Matrix& classifier) {
  try {
    return nc_report(features, labels, k, classifier);
  } catch (const DegenerateCentroid&) {
  } catch (const DegenerateInput&) {
  }
  NcReport r;
  r.nc1 = r.nc2 = r.nc3 = kNaN;
  r.k = k;
  r.d = features.cols();
  return r;
}

void check_coverage(const Dataset& data) {
  for (std::size_t c = 0; c < data.k; ++c)
    if (data.counts[c] == 0)
      throw DataCoverageError("training split has no samples of class " + std::to_string(c));
}

double evaluate_accuracy(const Mlp& m, const Dataset& data) {
  return accuracy_of(forward(m, data.features).logits, data.labels);
}

// L_NC1 over the rows with a nonzero feature; rows whose activations are all
// zero have no direction and contribute neither loss nor gradient.
std::optional<LossValueGrad> nc1_on_live_rows(const Matrix& feats, std::span<const std::size_t> labels,
                                              const Matrix& prototypes, double tau) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < feats.rows(); ++i)
    if (norm(feats.row(i)) > 0.0) live.push_back(i);
  if (live.empty()) return std::nullopt;
  if (live.size() == feats.rows()) {
    LossValueGrad l = nc1_loss(feats, labels, prototypes, tau);
    l.grads.emplace("projected", std::move(l.grads.at("features")));
    l.grads.erase("features");
    return l;
  }
  std::vector<std::size_t> live_labels(live.size());
  for (std::size_t r = 0; r < live.size(); ++r) live_labels[r] = labels[live[r]];
  LossValueGrad l = nc1_loss(gather_rows(feats, live), live_labels, prototypes, tau);
  Matrix grad(feats.rows(), feats.cols());
  const Matrix& g = l.grads.at("features");
  for (std::size_t r = 0; r < live.size(); ++r) {
    const auto src = g.row(r);
    std::copy(src.begin(), src.end(), grad.row(live[r]).begin());
  }
  l.grads.clear();
  l.grads.emplace("projected", std::move(grad));
  return l;
}

struct StepLosses {
  double cls = 0.0, nc1 = 0.0, nc2 = 0.0, kd = 0.0, total = 0.0;
};

// Everything the shared training loop needs beyond the student itself.
struct DistillContext {
  const Teacher* teacher = nullptr;
  DistillTargets targets;
};

}  // namespace

BatchObjective batch_objective(const Mlp& model, const Matrix& x, std::span<const std::size_t> labels,
                               const LossWeights& w, const DistillTargets* targets,
                               CentroidTracker* proj_tracker, CentroidTracker* head_tracker,
                               const Matrix* teacher_logits) {
  const bool use_nc1 = targets && w.lambda1 > 0.0;
  const bool use_nc2 = targets && w.lambda2 > 0.0;
  const bool use_kd = w.alpha > 0.0 && teacher_logits;
  if (use_nc2 && !proj_tracker)
    throw ContractViolation("batch_objective: the ETF term needs a centroid tracker");
  const std::size_t k = model.classes();
  const ForwardCache cache = forward(model, x);

  LossParts parts;
  parts.cls = cross_entropy(cache.logits, labels);
  if (use_nc1) {
    if (auto l = nc1_on_live_rows(cache.projected, labels, targets->prototypes, w.tau_proto))
      parts.nc1 = std::move(*l);
  }
  if (head_tracker) head_tracker->update(cache.penultimate(), labels);
  if (use_nc2) {
    proj_tracker->update(cache.projected, labels);
    const auto seen = proj_tracker->seen_classes();
    if (seen.size() >= 2) {
      const Matrix hs = proj_tracker->normalized();
      const Matrix ht = gather_rows(targets->teacher_normed, seen);
      LossValueGrad l = nc2_loss(hs, ht, k);
      Matrix d_proj = proj_tracker->backprop(l.grads.at("h_student"), cache.projected, labels);
      l.grads.clear();
      l.grads.emplace("projected", std::move(d_proj));
      parts.nc2 = std::move(l);
    }
  }
  if (use_kd) {
    LossValueGrad l = kd_kl(cache.logits, *teacher_logits, w.tau_kd);
    l.grads.emplace("logits", std::move(l.grads.at("z_s")));
    l.grads.erase("z_s");
    parts.kd = std::move(l);
  }

  const LossValueGrad total = total_loss(parts, w);
  BatchObjective out;
  out.cls = parts.cls.value;
  if (parts.nc1) out.nc1 = parts.nc1->value;
  if (parts.nc2) out.nc2 = parts.nc2->value;
  if (parts.kd) out.kd = parts.kd->value;
  out.total = total.value;
  if (!std::isfinite(out.total)) return out;

  Upstream up;
  up.logits = total.grads.at("logits");
  if (auto it = total.grads.find("projected"); it != total.grads.end()) up.projected = it->second;
  out.grads = backward(model, cache, up);
  return out;
}

namespace {

TrainResult run_training(Mlp model, const DistillConfig& cfg, const Dataset& train,
                         const Dataset& test, const DistillContext& ctx) {
  cfg.validate();
  check_coverage(train);
  const LossWeights& w = cfg.weights;
  const bool use_nc2 = ctx.teacher && w.lambda2 > 0.0;
  const bool use_kd = ctx.teacher && w.alpha > 0.0;
  const bool refresh_head = cfg.head == HeadMode::Nc3Centroid && cfg.centroid_source == CentroidSource::Student;
  const std::size_t k = train.k;
  const DistillTargets* targets = ctx.teacher ? &ctx.targets : nullptr;

  std::optional<CentroidTracker> proj_tracker;
  if (use_nc2) proj_tracker.emplace(k, model.projected_dim(), cfg.ema_beta);
  std::optional<CentroidTracker> head_tracker;
  if (refresh_head) head_tracker.emplace(k, model.feature_dim(), cfg.ema_beta);

  Matrix teacher_logits;
  if (use_kd) teacher_logits = forward(ctx.teacher->model, train.features).logits;

  const Rng root(cfg.seed);
  const Rng shuffle_root = root.split("shuffle");
  std::vector<std::vector<double>> velocity;
  TrainResult result;
  if (cfg.isometric_projector) retract_projector(model);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = cfg.lr_at(epoch);
    Rng epoch_rng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    const auto plan = batches(train, cfg.batch_size, epoch_rng, true);

    StepLosses sums;
    for (const auto& idx : plan) {
      const Dataset batch = train.subset(idx);
      Matrix batch_teacher;
      if (use_kd) batch_teacher = gather_rows(teacher_logits, idx);
      BatchObjective obj = batch_objective(model, batch.features, batch.labels, w, targets,
                                           proj_tracker ? &*proj_tracker : nullptr,
                                           head_tracker ? &*head_tracker : nullptr,
                                           use_kd ? &batch_teacher : nullptr);
      if (!std::isfinite(obj.total))
        throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                          ": non-finite loss");

      const double bw = static_cast<double>(idx.size());
      sums.cls += bw * obj.cls;
      sums.nc1 += bw * obj.nc1;
      sums.nc2 += bw * obj.nc2;
      sums.kd += bw * obj.kd;
      sums.total += bw * obj.total;

      const auto p = parameters(model);
      const auto g = parameters(obj.grads, model);
      sgd_step(p, g, velocity, lr, cfg.momentum, cfg.weight_decay);
      if (cfg.isometric_projector) retract_projector(model);
    }

    if (epoch == 0) {
      for (const auto* tracker : {proj_tracker ? &*proj_tracker : nullptr,
                                  head_tracker ? &*head_tracker : nullptr})
        if (tracker && !tracker->all_seen())
          throw DataCoverageError("centroid tracker did not see every class in the first epoch");
    }
    if (head_tracker) set_nc3_head(model, head_tracker->normalized(), cfg.head_scale);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    for (double* v : {&sums.cls, &sums.nc1, &sums.nc2, &sums.kd, &sums.total})
      *v /= static_cast<double>(train.size());
    if (!all_finite(parameters(model).front()))
      throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                        ": non-finite parameters");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_cls = sums.cls;
    rec.loss_nc1 = sums.nc1;
    rec.loss_nc2 = sums.nc2;
    rec.loss_kd = sums.kd;
    rec.loss_total = sums.total;
    const Evaluation ev = evaluate(model, test);
    rec.acc_train = evaluate_accuracy(model, train);
    rec.acc_test = ev.accuracy;
    rec.nc1 = ev.report.nc1;
    rec.nc2 = ev.report.nc2;
    rec.nc3 = ev.report.nc3;
    rec.secs = cfg.log_wallclock ? secs : 0.0;
    result.log.records.push_back(rec);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

Evaluation evaluate(const Mlp& m, const Dataset& data) {
  const ForwardCache cache = forward(m, data.features);
  Evaluation ev;
  ev.accuracy = accuracy_of(cache.logits, data.labels);
  ev.report = report_or_nan(cache.penultimate(), data.labels, data.k, classifier_rows(m));
  return ev;
}

TrainResult train_teacher(const LayerSpec& spec, const DistillConfig& cfg, const Dataset& train,
                          const Dataset& test) {
  Rng init_rng = Rng(cfg.seed).split("init");
  Mlp model = init_mlp(spec, init_rng);
  return run_training(std::move(model), cfg, train, test, DistillContext{});
}

CentroidSet extract_teacher_centroids(const Mlp& model, const Dataset& data) {
  const ForwardCache cache = forward(model, data.features);
  return class_means(cache.penultimate(), data.labels, data.k);
}

TrainResult distill(const Teacher& teacher, const LayerSpec& student_spec,
                    const DistillConfig& cfg, const Dataset& train, const Dataset& test) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng init_rng = root.split("init");
  Mlp student = init_mlp(student_spec, init_rng);
  if (teacher.centroids.k() != train.k)
    throw ContractViolation("distill: teacher centroids cover a different class count");

  const LossWeights& w = cfg.weights;
  DistillContext ctx;
  ctx.teacher = &teacher;
  if (w.lambda1 > 0.0 || w.lambda2 > 0.0) {
    const std::size_t layer = cfg.distill_layer.value_or(student.hidden.size() - 1);
    if (layer >= student.hidden.size())
      throw ContractViolation("distill: distill_layer " + std::to_string(layer) + " does not exist");
    Rng proj_rng = root.split("projector");
    attach_projector(student, layer, teacher.centroids.dim(), proj_rng);
    ctx.targets.prototypes =
        cfg.proto_centered ? teacher.centroids.normalized : teacher.centroids.class_means;
    ctx.targets.teacher_normed = teacher.centroids.normalized;
  }

  if (cfg.head == HeadMode::Nc3Centroid) {
    if (cfg.centroid_source == CentroidSource::Teacher) {
      if (teacher.centroids.dim() != student.feature_dim())
        throw ContractViolation("distill: teacher centroids (dim " +
                                std::to_string(teacher.centroids.dim()) +
                                ") cannot serve as a student head of width " +
                                std::to_string(student.feature_dim()));
      set_nc3_head(student, teacher.centroids.normalized, cfg.head_scale);
    } else {
      set_nc3_head(student, extract_teacher_centroids(student, train), cfg.head_scale);
    }
  }
  return run_training(std::move(student), cfg, train, test, ctx);
}

namespace {

Matrix class_major_means(const Matrix& h, std::size_t k, std::size_t n_per_class) {
  Matrix means(k, h.cols());
  for (std::size_t c = 0; c < k; ++c) {
    auto m = means.row(c);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const auto row = h.row(c * n_per_class + i);
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += row[j];
    }
    for (double& v : m) v /= static_cast<double>(n_per_class);
  }
  return means;
}

struct UfmObjective {
  double nc1 = 0.0;
  double nc2 = 0.0;
  double total = 0.0;
  Matrix grad;
};

UfmObjective ufm_objective(const Matrix& h, std::span<const std::size_t> labels,
                           const Matrix& teacher_etf, const LossWeights& w, std::size_t k,
                           std::size_t n_per_class, bool want_grad) {
  UfmObjective out;
  out.grad = Matrix(h.rows(), h.cols());
  if (w.lambda1 > 0.0) {
    const LossValueGrad l = nc1_loss(h, labels, teacher_etf, w.tau_proto);
    out.nc1 = l.value;
    if (want_grad) axpy(w.lambda1, l.grads.at("features"), out.grad);
  }
  if (w.lambda2 > 0.0) {
    const Matrix means = class_major_means(h, k, n_per_class);
    const LossValueGrad l = nc2_loss(normalize_centered(means), teacher_etf);
    out.nc2 = l.value;
    if (want_grad) {
      const Matrix d_means = normalize_centered_backward(means, l.grads.at("h_student"));
      const double inv_n = 1.0 / static_cast<double>(n_per_class);
      for (std::size_t i = 0; i < h.rows(); ++i) {
        const auto src = d_means.row(labels[i]);
        auto dst = out.grad.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w.lambda2 * inv_n * src[j];
      }
    }
  }
  out.total = w.lambda1 * out.nc1 + w.lambda2 * out.nc2;
  return out;
}

}  // namespace

UfmResult ufm_optimize(std::size_t k, std::size_t d, std::size_t n_per_class,
                       const Matrix& teacher_etf, const LossWeights& weights, std::size_t steps,
                       double lr, Rng& rng, const UfmOptions& options) {
  weights.validate();
  if (teacher_etf.rows() != k || teacher_etf.cols() != d)
    throw ContractViolation("ufm_optimize: teacher ETF must be k×d");
  if (n_per_class == 0) throw ContractViolation("ufm_optimize: n_per_class must be positive");
  if (!(lr > 0.0)) throw ContractViolation("ufm_optimize: lr must be positive");

  UfmResult res;
  const std::size_t n = k * n_per_class;
  res.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.labels[i] = i / n_per_class;
  if (options.init_features) {
    if (options.init_features->rows() != n || options.init_features->cols() != d)
      throw ContractViolation("ufm_optimize: init_features has the wrong shape");
    res.features = *options.init_features;
  } else {
    res.features = Matrix(n, d);
    for (double& v : res.features.flat()) v = options.init_scale * rng.gaussian();
  }

  Matrix& h = res.features;
  auto project_to_sphere = [&](Matrix& m) {
    if (!options.sphere_radius) return;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      auto row = m.row(i);
      const double len = norm(row);
      if (len > 0.0)
        for (double& v : row) v *= *options.sphere_radius / len;
    }
  };
  project_to_sphere(h);
  const Matrix& classifier = teacher_etf;
  auto record = [&](std::size_t step, const UfmObjective& obj) {
    EpochRecord r;
    r.epoch = step;
    r.loss_nc1 = obj.nc1;
    r.loss_nc2 = obj.nc2;
    r.loss_total = obj.total;
    const NcReport rep = report_or_nan(h, res.labels, k, classifier);
    r.nc1 = rep.nc1;
    r.nc2 = rep.nc2;
    r.nc3 = rep.nc3;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_sim = -2.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double s = norm(h.row(i)) > 0.0 ? cosine(h.row(i), teacher_etf.row(c)) : 0.0;
        if (s > best_sim) {
          best_sim = s;
          best = c;
        }
      }
      if (best == res.labels[i]) ++correct;
    }
    r.acc_train = static_cast<double>(correct) / static_cast<double>(n);
    res.log.records.push_back(r);
    return rep;
  };
  auto converged = [&](const NcReport& rep) {
    return options.stop_nc1 > 0.0 && options.stop_nc2 > 0.0 && rep.nc1 < options.stop_nc1 &&
           rep.nc2 < options.stop_nc2;
  };

  UfmObjective current = ufm_objective(h, res.labels, teacher_etf, weights, k, n_per_class, true);
  NcReport rep = record(0, current);
  double rate = lr;
  std::size_t step = 0;
  while (step < steps && !converged(rep)) {
    if (!std::isfinite(current.total))
      throw TrainingDiverged(step, "ufm_optimize: non-finite objective at step " + std::to_string(step));
    Matrix candidate = h;
    UfmObjective next;
    for (int halvings = 0;; ++halvings) {
      candidate = h;
      axpy(-rate, current.grad, candidate);
      project_to_sphere(candidate);
      next = ufm_objective(candidate, res.labels, teacher_etf, weights, k, n_per_class, true);
      if (next.total <= current.total) break;
      if (halvings == 60) {
        // No descent at any representable rate: already stationary.
        candidate = h;
        next = current;
        break;
      }
      rate *= 0.5;
    }
    h = std::move(candidate);
    current = std::move(next);
    ++step;
    const bool log_now = step == steps || (options.log_every > 0 && step % options.log_every == 0);
    if (log_now) {
      rep = record(step, current);
    } else if (options.stop_nc1 > 0.0 && options.stop_nc2 > 0.0) {
      rep = report_or_nan(h, res.labels, k, classifier);
    }
  }
  if (res.log.records.back().epoch != step) rep = record(step, current);
  res.steps_run = step;
  res.final_nc1 = rep.nc1;
  res.final_nc2 = rep.nc2;
  res.final_lr = rate;
  return res;
}

}  // namespace nckd
