#include <gtest/gtest.h>

#include <filesystem>

#include "nckd/data.hpp"
#include "nckd/error.hpp"
#include "nckd/geometry.hpp"
#include "nckd/ncmetrics.hpp"

namespace nckd {
namespace {

MixtureSpec small_spec() {
  MixtureSpec s;
  s.k = 4;
  s.d = 6;
  s.n_per_class = 10;
  return s;
}

TEST(Csv, MinimalFile) {
  const Dataset d = parse_csv("label,f0,f1\n0,1.0,0.0\n1,0.0,1.0");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.k, 2u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_TRUE(d.balanced);
  EXPECT_EQ(d.features, Matrix::from_rows({{1, 0}, {0, 1}}));
}

TEST(Csv, MalformedCellNamesLine) {
  try {
    parse_csv("label,f0,f1\n0,1.0,0.0\n0,1.0,x\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
  EXPECT_THROW(parse_csv("label,f0\n0,1.0,2.0\n"), ParseError);
  EXPECT_THROW(parse_csv("label,f0\n-1,1.0\n"), ParseError);
  EXPECT_THROW(load_csv("/nonexistent/data.csv"), IoError);
}

TEST(Csv, RoundTripWithinTolerance) {
  Rng rng(1);
  const Dataset d = gaussian_mixture(small_spec(), rng);
  const Dataset back = parse_csv(to_csv(d));
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.labels, d.labels);
  for (std::size_t i = 0; i < d.features.size(); ++i)
    EXPECT_NEAR(back.features.flat()[i], d.features.flat()[i], 1e-12);

  const auto path = (std::filesystem::temp_directory_path() / "nckd_data_test.csv").string();
  save_csv(path, d);
  EXPECT_EQ(to_csv(load_csv(path)), to_csv(d));
  std::filesystem::remove(path);
}

TEST(Mixture, ZeroNoiseCollapsesToCenters) {
  MixtureSpec s = small_spec();
  s.within_class_std = 0.0;
  Rng rng(2);
  const Dataset d = gaussian_mixture(s, rng);
  Rng center_rng = Rng(2).split("centers");
  const Matrix centers = mixture_centers(s, center_rng);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < s.d; ++j) EXPECT_EQ(d.features(i, j), centers(d.labels[i], j));
  EXPECT_NEAR(nc1(d.features, d.labels, d.k), 0.0, 1e-12);
}

TEST(Mixture, EtfCentersHaveZeroNc2) {
  Rng rng(3);
  const Matrix centers = mixture_centers(small_spec(), rng);
  EXPECT_LT(nc2(normalize_centered(centers)), 1e-9);
}

TEST(Mixture, ClassMajorAndBalanced) {
  Rng rng(4);
  const Dataset d = gaussian_mixture(small_spec(), rng);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.labels[i], i / 10);
  EXPECT_TRUE(d.balanced);
  MixtureSpec bad = small_spec();
  bad.k = 1;
  EXPECT_THROW(bad.validate(), ContractViolation);
}

TEST(Split, EvenFractionAndDeterminism) {
  Rng rng(5);
  const Dataset d = gaussian_mixture(small_spec(), rng);
  Rng a(9), b(9);
  const Split s1 = split(d, 0.5, a), s2 = split(d, 0.5, b);
  for (std::size_t c : s1.train.counts) EXPECT_EQ(c, 5u);
  for (std::size_t c : s1.test.counts) EXPECT_EQ(c, 5u);
  EXPECT_EQ(s1.train.features, s2.train.features);
  EXPECT_EQ(s1.test.labels, s2.test.labels);
}

TEST(Split, KeepsRelativeOrder) {
  Rng rng(6);
  const Dataset d = gaussian_mixture(small_spec(), rng);
  Rng srng(1);
  const Split s = split(d, 1.0 / 3.0, srng);
  EXPECT_EQ(s.train.size() + s.test.size(), d.size());
  for (std::size_t i = 1; i < s.train.size(); ++i) EXPECT_LE(s.train.labels[i - 1], s.train.labels[i]);
}

TEST(Batches, OrderAndCoverage) {
  Rng rng(7);
  const Dataset d = gaussian_mixture(small_spec(), rng);
  const auto ordered = batches(d, 16, rng, false);
  ASSERT_EQ(ordered.size(), 3u);
  EXPECT_EQ(ordered.back().size(), 8u);
  std::size_t next = 0;
  for (const auto& b : ordered)
    for (std::size_t i : b) EXPECT_EQ(i, next++);

  const auto one = batches(d, 1000, rng, true);
  ASSERT_EQ(one.size(), 1u);
  std::vector<std::size_t> all = one.front();
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(Dataset, MakeRejectsBadInput) {
  EXPECT_THROW(Dataset::make(Matrix(2, 1), {0, 3}, 2), ContractViolation);
  Matrix f(1, 1, std::numeric_limits<double>::infinity());
  EXPECT_THROW(Dataset::make(f, {0}, 1), ContractViolation);
}

}  // namespace
}  // namespace nckd
