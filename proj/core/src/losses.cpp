#include "nckd/losses.hpp"

#include <cmath>
#include <string>

#include "nckd/error.hpp"

namespace nckd {

const Matrix& LossValueGrad::grad(const std::string& name) const {
  const auto it = grads.find(name);
  if (it == grads.end()) throw ContractViolation("LossValueGrad: no gradient named " + name);
  return it->second;
}

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(alpha >= 0.0))
    throw ContractViolation("LossWeights: lambda1, lambda2 and alpha must be nonnegative");
  if (!(tau_proto > 0.0) || !(tau_kd > 0.0))
    throw ContractViolation("LossWeights: temperatures must be positive");
}

LossValueGrad cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw ContractViolation("cross_entropy: label out of range");
  const Vector logp = log_softmax(logits);
  Matrix g(1, logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) g(0, j) = std::exp(logp[j]);
  g(0, label) -= 1.0;
  LossValueGrad out{-logp[label], {}};
  out.grads.emplace("logits", std::move(g));
  return out;
}

LossValueGrad cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw ContractViolation("cross_entropy: batch size mismatch");
  const std::size_t b = logits.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  Matrix g(b, logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const LossValueGrad row = cross_entropy(logits.row(i), labels[i]);
    total += row.value;
    const auto src = row.grads.at("logits").row(0);
    auto dst = g.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] * inv_b;
  }
  LossValueGrad out{total * inv_b, {}};
  out.grads.emplace("logits", std::move(g));
  return out;
}

LossValueGrad kd_kl(std::span<const double> z_s, std::span<const double> z_t, double tau) {
  if (z_s.size() != z_t.size()) throw ContractViolation("kd_kl: logit dimensions differ");
  if (!(tau > 0.0)) throw ContractViolation("kd_kl: temperature must be positive");
  const Vector logp_t = log_softmax(z_t, tau);
  const Vector logp_s = log_softmax(z_s, tau);
  double kl = 0.0;
  Matrix g(1, z_s.size());
  for (std::size_t j = 0; j < z_s.size(); ++j) {
    const double p_t = std::exp(logp_t[j]);
    if (p_t > 0.0) kl += p_t * (logp_t[j] - logp_s[j]);
    g(0, j) = tau * (std::exp(logp_s[j]) - p_t);
  }
  LossValueGrad out{tau * tau * std::max(kl, 0.0), {}};
  out.grads.emplace("z_s", std::move(g));
  return out;
}

LossValueGrad kd_kl(const Matrix& z_s, const Matrix& z_t, double tau) {
  if (z_s.rows() != z_t.rows() || z_s.cols() != z_t.cols())
    throw ContractViolation("kd_kl: logit shapes differ");
  const std::size_t b = z_s.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  Matrix g(b, z_s.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const LossValueGrad row = kd_kl(z_s.row(i), z_t.row(i), tau);
    total += row.value;
    const auto src = row.grads.at("z_s").row(0);
    auto dst = g.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] * inv_b;
  }
  LossValueGrad out{total * inv_b, {}};
  out.grads.emplace("z_s", std::move(g));
  return out;
}

LossValueGrad nc1_loss(const Matrix& student_feats, std::span<const std::size_t> labels,
                       const Matrix& teacher_centroids, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("nc1_loss: temperature must be positive");
  if (labels.size() != student_feats.rows())
    throw ContractViolation("nc1_loss: batch size mismatch");
  if (student_feats.cols() != teacher_centroids.cols())
    throw ContractViolation("nc1_loss: student features and centroids differ in dimension");
  const std::size_t b = student_feats.rows();
  const std::size_t k = teacher_centroids.rows();
  const std::size_t d = student_feats.cols();

  Vector centroid_norm(k);
  for (std::size_t c = 0; c < k; ++c) {
    centroid_norm[c] = norm(teacher_centroids.row(c));
    if (!(centroid_norm[c] > 0.0))
      throw DegenerateCentroid(c, "nc1_loss: teacher centroid " + std::to_string(c) + " is zero");
  }

  const double inv_b = 1.0 / static_cast<double>(b);
  Matrix g(b, d);
  Vector sims(k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) throw ContractViolation("nc1_loss: label out of range");
    const auto f = student_feats.row(i);
    const double f_norm = norm(f);
    if (!(f_norm > 0.0))
      throw DegenerateInput("nc1_loss: student feature " + std::to_string(i) + " is zero");
    for (std::size_t c = 0; c < k; ++c)
      sims[c] = dot(f, teacher_centroids.row(c)) / (f_norm * centroid_norm[c]);

    const Vector logp = log_softmax(sims, tau);
    total -= logp[labels[i]];

    // dL/ds_c = (p_c − [c = y]) / τ, ds_c/df = c_c/(‖f‖‖c_c‖) − s_c f/‖f‖².
    auto gi = g.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double coeff = (std::exp(logp[c]) - (c == labels[i] ? 1.0 : 0.0)) / tau * inv_b;
      if (coeff == 0.0) continue;
      const auto cr = teacher_centroids.row(c);
      const double a = coeff / (f_norm * centroid_norm[c]);
      const double s = coeff * sims[c] / (f_norm * f_norm);
      for (std::size_t j = 0; j < d; ++j) gi[j] += a * cr[j] - s * f[j];
    }
  }
  LossValueGrad out{total * inv_b, {}};
  out.grads.emplace("features", std::move(g));
  return out;
}

LossValueGrad nc2_loss(const Matrix& h_student, const Matrix& h_teacher,
                       std::optional<std::size_t> num_classes) {
  if (h_student.rows() != h_teacher.rows() || h_student.cols() != h_teacher.cols())
    throw ContractViolation("nc2_loss: student and teacher matrices differ in shape");
  const std::size_t k = h_student.rows();
  const std::size_t classes = num_classes.value_or(k);
  if (classes < 2 || classes < k) throw ContractViolation("nc2_loss: invalid class count");
  for (const Matrix* m : {&h_student, &h_teacher})
    for (std::size_t r = 0; r < k; ++r)
      if (std::abs(norm(m->row(r)) - 1.0) > 1e-9)
        throw ContractViolation("nc2_loss: row " + std::to_string(r) + " is not unit-norm");

  const double off = -1.0 / (static_cast<double>(classes) - 1.0);
  Matrix residual = matmul_bt(h_student, h_teacher);
  double value = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      residual(i, j) -= (i == j ? 1.0 : off);
      value += residual(i, j) * residual(i, j);
    }
  }
  Matrix g = matmul(residual, h_teacher);
  for (double& v : g.flat()) v *= 2.0;
  LossValueGrad out{value, {}};
  out.grads.emplace("h_student", std::move(g));
  return out;
}

LossValueGrad total_loss(const LossParts& parts, const LossWeights& weights) {
  LossValueGrad out{parts.cls.value, parts.cls.grads};
  auto accumulate = [&](const std::optional<LossValueGrad>& part, double w) {
    if (!part || w == 0.0) return;
    out.value += w * part->value;
    for (const auto& [name, g] : part->grads) {
      auto it = out.grads.find(name);
      if (it == out.grads.end()) {
        out.grads.emplace(name, w * g);
      } else {
        axpy(w, g, it->second);
      }
    }
  };
  accumulate(parts.nc1, weights.lambda1);
  accumulate(parts.nc2, weights.lambda2);
  accumulate(parts.kd, weights.alpha);
  return out;
}

}  // namespace nckd
