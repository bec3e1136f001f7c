#include "nckd/cli/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "nckd/cli/config.hpp"
#include "nckd/geometry.hpp"
#include "nckd/losses.hpp"
#include "nckd/model.hpp"
#include "nckd/ncmetrics.hpp"
#include "nckd/trainer.hpp"

namespace nckd::cli {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

constexpr double kStep = 1e-5;

double rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale > 0.0 ? diff / scale : 0.0;
}

// Central differences of f over every entry of x.
Vector numeric_grad(std::span<double> x, const std::function<double()>& f) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kStep;
    const double up = f();
    x[i] = keep - kStep;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * kStep);
  }
  return g;
}

Matrix gaussian_matrix(std::size_t r, std::size_t c, double scale, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.flat()) v = scale * rng.gaussian();
  return m;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i < k ? i : rng.below(k);
  return y;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

double case_ce(Rng& rng) {
  const std::size_t k = pick(rng, 2, 5), b = pick(rng, 1, 8);
  Matrix z = gaussian_matrix(b, k, 2.0, rng);
  const auto y = random_labels(b, k, rng);
  const Matrix g = cross_entropy(z, y).grads.at("logits");
  const Vector n = numeric_grad(z.flat(), [&] { return cross_entropy(z, y).value; });
  return rel_error(g.flat(), n);
}

double case_kd(Rng& rng) {
  const std::size_t k = pick(rng, 2, 5), b = pick(rng, 1, 8);
  Matrix zs = gaussian_matrix(b, k, 2.0, rng);
  const Matrix zt = gaussian_matrix(b, k, 2.0, rng);
  const double tau = 1.0 + 4.0 * rng.uniform();
  const Matrix g = kd_kl(zs, zt, tau).grads.at("z_s");
  const Vector n = numeric_grad(zs.flat(), [&] { return kd_kl(zs, zt, tau).value; });
  return rel_error(g.flat(), n);
}

double case_nc1(Rng& rng) {
  const std::size_t k = pick(rng, 2, 5), b = pick(rng, 1, 8), d = pick(rng, 2, 8);
  Matrix f = gaussian_matrix(b, d, 1.0, rng);
  const Matrix c = gaussian_matrix(k, d, 1.0, rng);
  const auto y = random_labels(b, k, rng);
  const double tau = 0.1 + 0.9 * rng.uniform();
  const Matrix g = nc1_loss(f, y, c, tau).grads.at("features");
  const Vector n = numeric_grad(f.flat(), [&] { return nc1_loss(f, y, c, tau).value; });
  return rel_error(g.flat(), n);
}

// Through centering and normalization of raw class means.
double case_nc2(Rng& rng) {
  const std::size_t k = pick(rng, 2, 5), d = pick(rng, k, 8);
  Matrix means = gaussian_matrix(k, d, 1.0, rng);
  const Matrix ht = normalize_centered(gaussian_matrix(k, d, 1.0, rng));
  const LossValueGrad l = nc2_loss(normalize_centered(means), ht);
  const Matrix g = normalize_centered_backward(means, l.grads.at("h_student"));
  const Vector n =
      numeric_grad(means.flat(), [&] { return nc2_loss(normalize_centered(means), ht).value; });
  return rel_error(g.flat(), n);
}

// The full training objective of one batch through a two-hidden-layer MLP
// with a projector, an EMA tracker holding earlier batches, and either head.
double case_composite(Rng& rng) {
  const std::size_t k = pick(rng, 2, 5), b = pick(rng, k, 8), d_in = pick(rng, 2, 8);
  const std::size_t w0 = pick(rng, 3, 8), w1 = pick(rng, 3, 8);
  std::size_t d_proj = pick(rng, 2, 8);
  if (d_proj == w1) d_proj = w1 == 8 ? 7 : w1 + 1;

  Mlp m = init_mlp({d_in, {w0, w1}, k}, rng);
  for (auto& layer : m.hidden)
    for (double& v : layer.bias) v = 0.1 * rng.gaussian();
  attach_projector(m, rng.below(2), d_proj, rng);
  const bool nc3 = rng.below(2) == 1;
  if (nc3) set_nc3_head(m, normalize_centered(gaussian_matrix(k, w1, 1.0, rng)), 1.0 + 4.0 * rng.uniform());

  const Matrix x = gaussian_matrix(b, d_in, 1.0, rng);
  const auto y = random_labels(b, k, rng);
  DistillTargets targets{gaussian_matrix(k, d_proj, 1.0, rng),
                         normalize_centered(gaussian_matrix(k, d_proj, 1.0, rng))};
  const Matrix teacher_logits = gaussian_matrix(b, k, 2.0, rng);
  LossWeights w;
  w.lambda1 = 0.5 + 1.5 * rng.uniform();
  w.lambda2 = 0.5 + 1.5 * rng.uniform();
  w.alpha = 0.5 + 1.5 * rng.uniform();
  w.tau_proto = 0.2 + 0.8 * rng.uniform();
  w.tau_kd = 1.0 + 3.0 * rng.uniform();

  CentroidTracker warm(k, d_proj, 0.95 * rng.uniform());
  {
    const auto y0 = random_labels(2 * k, k, rng);
    warm.update(gaussian_matrix(2 * k, d_proj, 1.0, rng), y0);
  }
  auto objective = [&](const Mlp& net, MlpGrads* grads) {
    CentroidTracker tracker = warm;
    BatchObjective o = batch_objective(net, x, y, w, &targets, &tracker, nullptr, &teacher_logits);
    if (grads) *grads = std::move(o.grads);
    return o.total;
  };

  MlpGrads g;
  objective(m, &g);
  double worst = 0.0;
  const auto params = parameters(m);
  const auto grads = parameters(g, m);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Vector n = numeric_grad(params[p], [&] { return objective(m, nullptr); });
    worst = std::max(worst, rel_error(grads[p], n));
  }
  return worst;
}

}  // namespace

std::vector<Check> verify_etf() {
  std::vector<Check> out;
  const Rng root(0);
  for (std::size_t k = 2; k <= 16; ++k) {
    Rng rng = root.split(static_cast<std::uint64_t>(k));
    const Matrix e = make_simplex_etf(k, k + 4, rng);
    double norm_dev = 0.0, cos_dev = 0.0;
    const double target = -1.0 / static_cast<double>(k - 1);
    for (std::size_t a = 0; a < k; ++a) {
      norm_dev = std::max(norm_dev, std::abs(norm(e.row(a)) - 1.0));
      for (std::size_t c = a + 1; c < k; ++c)
        cos_dev = std::max(cos_dev, std::abs(cosine(e.row(a), e.row(c)) - target));
    }
    const double n2 = nc2(normalize_centered(e));
    out.push_back({"etf K=" + std::to_string(k),
                   norm_dev <= 1e-12 && cos_dev < 1e-9 && n2 < 1e-9,
                   fmt("norm_dev=%.2e cos_dev=%.2e nc2=%.2e", norm_dev, cos_dev, n2)});
  }
  return out;
}

std::vector<GradFamilyResult> gradient_check(std::uint64_t seed, std::size_t cases_per_family) {
  struct Family {
    const char* name;
    double (*run)(Rng&);
  };
  const Family families[] = {{"cross_entropy", case_ce},
                             {"kd_kl", case_kd},
                             {"nc1_loss", case_nc1},
                             {"nc2_loss", case_nc2},
                             {"composite", case_composite}};
  const Rng root(seed);
  std::vector<GradFamilyResult> out;
  for (const Family& f : families) {
    Rng rng = root.split(f.name);
    GradFamilyResult r{f.name, cases_per_family, 0.0};
    for (std::size_t c = 0; c < cases_per_family; ++c) {
      Rng case_rng = rng.split(static_cast<std::uint64_t>(c));
      r.max_rel_error = std::max(r.max_rel_error, f.run(case_rng));
    }
    out.push_back(r);
  }
  return out;
}

std::vector<Check> verify_grad() {
  std::vector<Check> out;
  std::size_t total = 0;
  for (const GradFamilyResult& r : gradient_check(0, 25)) {
    total += r.cases;
    out.push_back({"grad " + r.family, r.max_rel_error < 1e-5,
                   std::to_string(r.cases) + " cases, " + fmt("max_rel_error=%.2e", r.max_rel_error)});
  }
  out.push_back({"grad case count", total >= 100, std::to_string(total) + " randomized cases"});
  return out;
}

UfmOutcome run_ufm_harness(const UfmHarness& h) {
  const Rng root(h.seed);
  Rng etf_rng = root.split("etf");
  const Matrix etf = make_simplex_etf(h.k, h.d, etf_rng);
  LossWeights w;
  w.lambda1 = 1.0;
  w.lambda2 = 1.0;
  UfmOptions opt;
  opt.sphere_radius = h.sphere_radius;
  Rng feature_rng = root.split("features");
  const UfmResult r = ufm_optimize(h.k, h.d, h.n_per_class, etf, w, h.steps, h.lr, feature_rng, opt);
  return {r.final_nc1, r.final_nc2, r.steps_run, r.final_lr};
}

std::vector<Check> verify_ufm() {
  const UfmOutcome o = run_ufm_harness({});
  return {{"ufm collapse", o.nc1 < 1e-3 && o.nc2 < 1e-3,
           fmt("nc1=%.3e nc2=%.3e", o.nc1, o.nc2) + " after " + std::to_string(o.steps) + " steps"}};
}

std::vector<Check> run_suite(const std::string& name) {
  if (name == "etf") return verify_etf();
  if (name == "grad") return verify_grad();
  if (name == "ufm") return verify_ufm();
  if (name == "all") {
    std::vector<Check> all = verify_etf();
    for (auto& c : verify_grad()) all.push_back(std::move(c));
    for (auto& c : verify_ufm()) all.push_back(std::move(c));
    return all;
  }
  throw ConfigError("unknown suite '" + name + "' (expected etf, grad, ufm or all)");
}

}  // namespace nckd::cli
