#include <gtest/gtest.h>

#include <cmath>

#include "nckd/error.hpp"
#include "nckd/geometry.hpp"
#include "nckd/losses.hpp"

namespace nckd {
namespace {

const double kLnOnePlusInvE = std::log1p(std::exp(-1.0));  // 0.313261...

TEST(CrossEntropy, Examples) {
  EXPECT_LT(cross_entropy(std::vector<double>{60.0, 5.0, 0.0}, 0).value, 1e-20);
  for (std::size_t k : {2u, 5u, 10u})
    EXPECT_NEAR(cross_entropy(std::vector<double>(k, 0.7), 1).value, std::log(double(k)), 1e-14);
  const LossValueGrad l = cross_entropy(std::vector<double>{1.0, 0.0}, 0);
  EXPECT_NEAR(l.value, kLnOnePlusInvE, 1e-15);
  EXPECT_NEAR(l.value, 0.313261, 1e-6);
  const double e = std::exp(1.0);
  EXPECT_NEAR(l.grad("logits")(0, 0), e / (e + 1.0) - 1.0, 1e-15);
  EXPECT_NEAR(l.grad("logits")(0, 1), 1.0 / (e + 1.0), 1e-15);
}

TEST(CrossEntropy, BatchIsMeanOfRows) {
  const Matrix z = Matrix::from_rows({{1.0, 0.0}, {0.0, 2.0}});
  const std::vector<std::size_t> y{0, 0};
  const double expect =
      0.5 * (cross_entropy(z.row(0), 0).value + cross_entropy(z.row(1), 0).value);
  EXPECT_NEAR(cross_entropy(z, y).value, expect, 1e-15);
  EXPECT_THROW(cross_entropy(z.row(0), 2), ContractViolation);
}

TEST(KdKl, Examples) {
  const std::vector<double> z{0.3, -1.2, 2.0};
  EXPECT_NEAR(kd_kl(z, z, 4.0).value, 0.0, 1e-15);
  // (p − q)·ln(p/q) summed over the two classes with p = e/(e+1).
  const double p = std::exp(1.0) / (std::exp(1.0) + 1.0), q = 1.0 - p;
  const double oracle = (p - q) * std::log(p / q);
  EXPECT_NEAR(oracle, 0.462117, 5e-7);
  EXPECT_NEAR(kd_kl(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}, 1.0).value, oracle,
              1e-15);
}

TEST(KdKl, ScalesWithTemperatureSquaredAndIsNonNegative) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector zs = rng_gaussian(rng, 5), zt = rng_gaussian(rng, 5);
    const double tau = 0.5 + 4.0 * rng.uniform();
    const double v = kd_kl(zs, zt, tau).value;
    EXPECT_GE(v, 0.0);
    // Same softened distributions at τ = 1 after dividing the logits by τ.
    Vector a = zs, b = zt;
    for (double& x : a) x /= tau;
    for (double& x : b) x /= tau;
    EXPECT_NEAR(v, tau * tau * kd_kl(a, b, 1.0).value, 1e-12);
  }
}

TEST(Nc1Loss, Examples) {
  const Matrix c = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix f = Matrix::from_rows({{1, 0}});
  const std::vector<std::size_t> y{0};
  EXPECT_NEAR(nc1_loss(f, y, c, 1.0).value, kLnOnePlusInvE, 1e-15);
  const double at_01 = nc1_loss(f, y, c, 0.1).value;
  EXPECT_NEAR(at_01, std::log1p(std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(at_01, 4.54e-5, 5e-8);

  const Matrix c3 = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  EXPECT_NEAR(nc1_loss(Matrix::from_rows({{2, 2, 2}}), std::vector<std::size_t>{1}, c3, 0.3).value,
              std::log(3.0), 1e-14);
}

TEST(Nc1Loss, InvariantToFeatureScale) {
  Rng rng(15);
  Matrix f(4, 3), c(3, 3);
  for (double& v : f.flat()) v = rng.gaussian();
  for (double& v : c.flat()) v = rng.gaussian();
  const std::vector<std::size_t> y{0, 1, 2, 1};
  EXPECT_NEAR(nc1_loss(f, y, c, 0.2).value, nc1_loss(3.0 * f, y, c, 0.2).value, 1e-12);
}

TEST(Nc1Loss, Errors) {
  const Matrix c = Matrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_THROW(nc1_loss(Matrix::from_rows({{0, 0}}), std::vector<std::size_t>{0}, c, 1.0),
               DegenerateInput);
  EXPECT_THROW(nc1_loss(Matrix::from_rows({{1, 0}}), std::vector<std::size_t>{0}, c, 0.0),
               ContractViolation);
  EXPECT_THROW(nc1_loss(Matrix::from_rows({{1, 0, 0}}), std::vector<std::size_t>{0}, c, 1.0),
               ContractViolation);
}

TEST(Nc2Loss, Examples) {
  Rng rng(2);
  const Matrix e = make_simplex_etf(7, 9, rng);
  EXPECT_LT(nc2_loss(e, e).value, 1e-15);

  const Matrix ht = Matrix::from_rows({{1}, {-1}});
  EXPECT_EQ(nc2_loss(ht, ht).value, 0.0);
  const Matrix swapped = Matrix::from_rows({{-1}, {1}});
  const LossValueGrad l = nc2_loss(swapped, ht);
  EXPECT_EQ(l.value, 16.0);
  // 2·R·H_t with R = [[−2, 2], [2, −2]].
  EXPECT_EQ(l.grad("h_student"), Matrix::from_rows({{-8}, {8}}));
}

TEST(Nc2Loss, SubsetOfClassesUsesFullTarget) {
  const Matrix h = Matrix::from_rows({{1, 0}, {0, 1}});
  // Off-diagonal target −1/4 for K = 5: residual 0.25 twice.
  EXPECT_NEAR(nc2_loss(h, h, 5).value, 2 * 0.0625, 1e-15);
}

TEST(TotalLoss, Examples) {
  LossParts parts;
  parts.cls.value = 0.5;
  parts.cls.grads["logits"] = Matrix::from_rows({{0.1, -0.1}});
  LossWeights off{0.0, 0.0, 0.0};
  EXPECT_EQ(total_loss(parts, off).value, 0.5);

  parts.nc1 = LossValueGrad{0.2, {}};
  parts.nc2 = LossValueGrad{0.3, {}};
  EXPECT_EQ(total_loss(parts, off).value, 0.5);
  LossWeights on{1.0, 1.0, 0.0};
  EXPECT_NEAR(total_loss(parts, on).value, 1.0, 1e-15);
}

TEST(LossWeights, Validate) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.lambda1 = -1.0;
  EXPECT_THROW(w.validate(), ContractViolation);
  w = {};
  w.tau_kd = 0.0;
  EXPECT_THROW(w.validate(), ContractViolation);
}

}  // namespace
}  // namespace nckd
