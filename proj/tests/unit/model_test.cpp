#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "nckd/error.hpp"
#include "nckd/geometry.hpp"
#include "nckd/io.hpp"
#include "nckd/losses.hpp"
#include "nckd/model.hpp"

namespace nckd {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.flat()) v = rng.gaussian();
  return m;
}

TEST(Forward, ZeroNetworkGivesUniformSoftmax) {
  Rng rng(0);
  Mlp m = init_mlp({3, {4}, 5}, rng);
  for (auto& span : parameters(m))
    for (double& v : span) v = 0.0;
  const ForwardCache c = forward(m, random_matrix(2, 3, rng));
  for (double v : c.logits.flat()) EXPECT_EQ(v, 0.0);
  for (double p : softmax(c.logits.row(0))) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(Forward, IdentityLayerPassesNonNegativeInput) {
  Rng rng(0);
  Mlp m = init_mlp({3, {3}, 2}, rng);
  m.hidden[0].weight = Matrix::identity(3);
  const Matrix x = Matrix::from_rows({{0.0, 1.5, 2.25}, {3.0, 0.5, 0.0}});
  EXPECT_EQ(forward(m, x).penultimate(), x);
}

TEST(Forward, Nc3HeadLogitsAreScaledInnerProducts) {
  Rng rng(1);
  Mlp m = init_mlp({4, {4}, 3}, rng);
  const Matrix c = make_simplex_etf(3, 4, rng);
  set_nc3_head(m, c, 5.0);
  const Matrix& rows = m.head.centroids;
  Matrix h(1, 4);
  for (std::size_t j = 0; j < 4; ++j) h(0, j) = rows(1, j);
  const Matrix logits = head_logits(m.head, h);
  EXPECT_NEAR(logits(0, 1), 5.0, 1e-12);
  EXPECT_NEAR(logits(0, 0), 5.0 * dot(rows.row(1), rows.row(0)), 1e-12);
  EXPECT_NEAR(logits(0, 2), 5.0 * dot(rows.row(1), rows.row(2)), 1e-12);
}

TEST(Nc3Head, ArgmaxIsOwnCentroidAndScaleInvariant) {
  Rng rng(2);
  Mlp m = init_mlp({6, {6}, 4}, rng);
  const Matrix c = make_simplex_etf(4, 6, rng);
  set_nc3_head(m, c, 10.0);
  for (std::size_t j = 0; j < 4; ++j) {
    for (double s : {0.01, 1.0, 300.0}) {
      Matrix h(1, 6);
      for (std::size_t t = 0; t < 6; ++t) h(0, t) = s * m.head.centroids(j, t);
      const Matrix z = head_logits(m.head, h);
      std::size_t best = 0;
      for (std::size_t k = 1; k < 4; ++k)
        if (z(0, k) > z(0, best)) best = k;
      EXPECT_EQ(best, j);
    }
  }
}

TEST(Nc3Head, SettingTwiceIsIdempotent) {
  Rng rng(3);
  Mlp m = init_mlp({5, {6}, 3}, rng);
  const Matrix c = normalize_centered(random_matrix(3, 6, rng));
  const Matrix x = random_matrix(4, 5, rng);
  set_nc3_head(m, c, 4.0);
  const Matrix first = forward(m, x).logits;
  set_nc3_head(m, c, 4.0);
  EXPECT_EQ(forward(m, x).logits, first);
  EXPECT_THROW(set_nc3_head(m, c, 0.0), ContractViolation);
}

TEST(Init, SameSeedSameParameters) {
  Rng a(17), b(17);
  Mlp ma = init_mlp({8, {16, 16}, 4}, a);
  Mlp mb = init_mlp({8, {16, 16}, 4}, b);
  attach_projector(ma, 1, 7, a);
  attach_projector(mb, 1, 7, b);
  const auto pa = parameters(ma), pb = parameters(mb);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].begin(), pa[i].end(), pb[i].begin()));
}

TEST(Projector, IdentityWhenWidthsAgree) {
  Rng rng(4);
  Mlp m = init_mlp({3, {5, 6}, 2}, rng);
  attach_projector(m, 0, 5, rng);
  EXPECT_FALSE(m.projector.has_value());
  const Matrix x = random_matrix(3, 3, rng);
  const ForwardCache c = forward(m, x);
  EXPECT_EQ(c.projected, c.act[0]);
  attach_projector(m, 1, 4, rng);
  ASSERT_TRUE(m.projector.has_value());
  EXPECT_EQ(m.projected_dim(), 4u);
}

TEST(Projector, RetractionGivesOrthonormalFrame) {
  Rng rng(5);
  Mlp m = init_mlp({3, {4, 6}, 2}, rng);
  for (std::size_t out : {std::size_t{12}, std::size_t{3}}) {
    attach_projector(m, 1, out, rng);
    retract_projector(m);
    const Matrix& w = m.projector->weight;
    const Matrix g = out > 6 ? matmul_at(w, w) : matmul_bt(w, w);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) EXPECT_NEAR(g(i, j), i == j ? 1.0 : 0.0, 1e-12);
    const Matrix once = w;
    retract_projector(m);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w.flat()[i], once.flat()[i], 1e-12);
  }
  const Matrix x = random_matrix(5, 3, rng);
  attach_projector(m, 1, 12, rng);
  retract_projector(m);
  const ForwardCache c = forward(m, x);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_NEAR(dot(c.projected.row(i), c.projected.row(j)), dot(c.act[1].row(i), c.act[1].row(j)), 1e-12);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  Mlp m = init_mlp({3, {4, 4}, 3}, rng);
  attach_projector(m, 0, 6, rng);
  const ForwardCache c = forward(m, random_matrix(5, 3, rng));
  Upstream up;
  up.logits = Matrix(5, 3);
  up.projected = Matrix(5, 6);
  MlpGrads g = backward(m, c, up);
  for (const auto& span : parameters(g, m))
    for (double v : span) EXPECT_EQ(v, 0.0);
}

// Central differences of a scalar loss of the logits and projected features.
void expect_gradients_match(Mlp& m, const Matrix& x, const Matrix& wl, const Matrix& wp) {
  auto loss = [&] {
    const ForwardCache c = forward(m, x);
    double s = 0.0;
    for (std::size_t i = 0; i < wl.size(); ++i) s += wl.flat()[i] * c.logits.flat()[i];
    for (std::size_t i = 0; i < wp.size(); ++i) s += wp.flat()[i] * std::tanh(c.projected.flat()[i]);
    return s;
  };
  const ForwardCache c = forward(m, x);
  Upstream up;
  up.logits = wl;
  Matrix dp = wp;
  for (std::size_t i = 0; i < dp.size(); ++i) {
    const double t = std::tanh(c.projected.flat()[i]);
    dp.flat()[i] *= 1.0 - t * t;
  }
  up.projected = dp;
  MlpGrads g = backward(m, c, up);
  const auto params = parameters(m);
  const auto grads = parameters(g, m);
  ASSERT_EQ(params.size(), grads.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double keep = params[p][i];
      params[p][i] = keep + 1e-5;
      const double up_v = loss();
      params[p][i] = keep - 1e-5;
      const double down_v = loss();
      params[p][i] = keep;
      const double numeric = (up_v - down_v) / 2e-5;
      EXPECT_NEAR(grads[p][i], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
    }
}

TEST(Backward, MatchesFiniteDifferencesLinearHeadWithProjector) {
  Rng rng(6);
  Mlp m = init_mlp({4, {5, 6}, 3}, rng);
  for (auto& l : m.hidden)
    for (double& b : l.bias) b = 0.1 * rng.gaussian();
  attach_projector(m, 0, 3, rng);
  expect_gradients_match(m, random_matrix(5, 4, rng), random_matrix(5, 3, rng), random_matrix(5, 3, rng));
}

TEST(Backward, MatchesFiniteDifferencesNc3Head) {
  Rng rng(7);
  Mlp m = init_mlp({4, {5, 6}, 3}, rng);
  for (auto& l : m.hidden)
    for (double& b : l.bias) b = 0.1 * rng.gaussian();
  attach_projector(m, 1, 2, rng);
  set_nc3_head(m, normalize_centered(random_matrix(3, 6, rng)), 3.0);
  expect_gradients_match(m, random_matrix(5, 4, rng), random_matrix(5, 3, rng), random_matrix(5, 2, rng));
  MlpGrads g = backward(m, forward(m, random_matrix(2, 4, rng)), Upstream{random_matrix(2, 3, rng), {}, {}});
  EXPECT_TRUE(g.head_weight.empty());
}

TEST(Checkpoint, RoundTripReproducesLogits) {
  Rng rng(8);
  Mlp m = init_mlp({4, {7, 5}, 3}, rng);
  attach_projector(m, 0, 6, rng);
  set_nc3_head(m, normalize_centered(random_matrix(3, 5, rng)), 2.5);
  const Matrix probe = random_matrix(4, 4, rng);
  const std::string text = checkpoint_to_json(m, {42, "abc"}, probe);
  const Checkpoint c = checkpoint_from_json(text);
  EXPECT_EQ(c.meta.seed, 42u);
  EXPECT_EQ(c.meta.config_hash, "abc");
  EXPECT_EQ(forward(c.model, probe).logits, forward(m, probe).logits);
  EXPECT_EQ(checkpoint_to_json(c.model, c.meta, probe), text);

  const auto path = (std::filesystem::temp_directory_path() / "nckd_model_test.ckpt.json").string();
  save_checkpoint(path, m, {1, "h"}, probe);
  EXPECT_EQ(load_checkpoint(path).model.head.scale, 2.5);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TamperedParametersAreRejected) {
  Rng rng(9);
  const Matrix probe = random_matrix(2, 2, rng);
  const std::string genuine = checkpoint_to_json(init_mlp({2, {3}, 2}, rng), {}, probe);
  const std::string other = checkpoint_to_json(init_mlp({2, {3}, 2}, rng), {}, probe);
  // Parameters of one network under the probe logits of another.
  const std::string forged =
      other.substr(0, other.find("\"probe\"")) + genuine.substr(genuine.find("\"probe\""));
  const auto path = (std::filesystem::temp_directory_path() / "nckd_forged.ckpt.json").string();
  write_text(path, forged);
  EXPECT_THROW(load_checkpoint(path), NumericError);
  write_text(path, genuine);
  EXPECT_NO_THROW(load_checkpoint(path));
  write_text(path, "{\"format\": \"nckd-mlp/1\"}");
  EXPECT_THROW(load_checkpoint(path), ContractViolation);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/nckd.ckpt.json"), IoError);
}

TEST(Predict, ArgmaxOfLogits) {
  Rng rng(11);
  Mlp m = init_mlp({3, {4}, 3}, rng);
  const Matrix x = random_matrix(6, 3, rng);
  const Matrix z = forward(m, x).logits;
  const auto p = predict(m, x);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(z(i, k), z(i, p[i]));
}

}  // namespace
}  // namespace nckd
