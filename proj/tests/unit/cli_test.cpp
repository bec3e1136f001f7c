#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nckd/cli/commands.hpp"
#include "nckd/cli/config.hpp"
#include "nckd/io.hpp"
#include "nckd/model.hpp"
#include "nckd/trainer.hpp"

namespace nckd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "nckd");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("nckd_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_config(const std::string& name, const json& j) const {
    write_text(path(name), j.dump(1));
    return path(name);
  }

  static json data_section() {
    return {{"source", "mixture"}, {"k", 3}, {"d", 6}, {"n_per_class", 24}};
  }

  json teacher_config() const {
    return {{"seed", 3},
            {"out", path("teacher")},
            {"data", data_section()},
            {"model", {{"hidden", {24, 24}}}},
            {"train", {{"epochs", 3}, {"batch_size", 16}}}};
  }

  json student_config(const std::string& variant) const {
    return {{"seed", 3},
            {"out", path("student_" + variant)},
            {"teacher", path("teacher")},
            {"variant", variant},
            {"data", data_section()},
            {"model", {{"hidden", {8}}}},
            {"train", {{"epochs", 3}, {"batch_size", 16}}}};
  }

  void train_teacher() {
    const Result r = run({"train-teacher", "--config", write_config("t.json", teacher_config())});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

TEST_F(CliTest, TrainTeacherWritesArtifacts) {
  train_teacher();
  for (const char* f : {"teacher.ckpt.json", "centroids.json", "trainlog.jsonl", "manifest.json",
                        "config.resolved.json", "data/train.csv", "data/test.csv", "data/dataset.json"})
    EXPECT_TRUE(fs::exists(dir_ / "teacher" / f)) << f;
  const json c = json::parse(read_text(path("teacher/centroids.json")));
  for (const char* key : {"class_means", "global_mean", "normalized"}) EXPECT_TRUE(c.contains(key)) << key;
}

TEST_F(CliTest, UnknownKeyIsConfigError) {
  json cfg = teacher_config();
  cfg["train"]["learning_rate"] = 0.1;
  const Result r = run({"train-teacher", "--config", write_config("bad.json", cfg)});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "teacher"));
}

TEST_F(CliTest, MalformedAndMissingConfigs) {
  write_text(path("broken.json"), "{\"seed\": ");
  EXPECT_EQ(run({"train-teacher", "--config", path("broken.json")}).code, 2);
  EXPECT_EQ(run({"train-teacher", "--config", path("absent.json")}).code, 3);
  EXPECT_EQ(run({"train-teacher"}).code, 2);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
  json cfg = teacher_config();
  cfg["train"]["lr"] = -1.0;
  EXPECT_EQ(run({"train-teacher", "--config", write_config("neg.json", cfg)}).code, 2);
}

TEST_F(CliTest, RerunIsByteIdentical) {
  train_teacher();
  const std::string log = read_text(path("teacher/trainlog.jsonl"));
  const std::string ckpt = read_text(path("teacher/teacher.ckpt.json"));
  const std::string manifest = read_text(path("teacher/manifest.json"));
  fs::remove_all(dir_ / "teacher");
  const Result again = run({"train-teacher", "--config", path("t.json")});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(read_text(path("teacher/trainlog.jsonl")), log);
  EXPECT_EQ(read_text(path("teacher/teacher.ckpt.json")), ckpt);
  EXPECT_EQ(read_text(path("teacher/manifest.json")), manifest);
  const Result reseeded = run({"train-teacher", "--config", path("t.json"), "--out", path("other"), "--seed", "4"});
  ASSERT_EQ(reseeded.code, 0) << reseeded.err;
  EXPECT_NE(read_text(path("other/trainlog.jsonl")), log);
}

TEST_F(CliTest, PlainVariantMatchesCrossEntropyTraining) {
  train_teacher();
  const Result r = run({"distill", "--config", write_config("s.json", student_config("full")),
                        "--variant", "plain", "--out", path("plain")});
  ASSERT_EQ(r.code, 0) << r.err;
  const DistillRunConfig cfg =
      parse_distill_config(json::parse(read_text(path("plain/config.resolved.json"))));
  EXPECT_EQ(cfg.variant, "plain");
  EXPECT_EQ(cfg.train.weights.lambda1, 0.0);
  EXPECT_EQ(cfg.train.weights.lambda2, 0.0);
  EXPECT_EQ(cfg.train.weights.alpha, 0.0);
  const Dataset train = load_csv(path("teacher/data/train.csv"));
  const Dataset test = load_csv(path("teacher/data/test.csv"));
  const TrainResult plain =
      nckd::train_teacher({train.dim(), cfg.hidden, train.k}, cfg.train, train, test);
  EXPECT_EQ(read_text(path("plain/trainlog.jsonl")), plain.log.to_jsonl());
}

TEST_F(CliTest, DistillWritesManifestWithHashes) {
  train_teacher();
  const Result r = run({"distill", "--config", write_config("s.json", student_config("full"))});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path out = dir_ / "student_full";
  const json m = json::parse(read_text((out / "manifest.json").string()));
  EXPECT_EQ(m.at("command"), "distill");
  std::vector<std::string> listed;
  for (const json& e : m.at("outputs")) {
    const std::string p = e.at("path");
    listed.push_back(p);
    const std::string bytes = read_text((out / p).string());
    EXPECT_EQ(e.at("hash"), content_hash(bytes)) << p;
    EXPECT_EQ(e.at("bytes").get<std::size_t>(), bytes.size()) << p;
  }
  for (const char* f : {"student.ckpt.json", "trainlog.jsonl", "nc_report.json", "config.resolved.json"})
    EXPECT_NE(std::find(listed.begin(), listed.end(), f), listed.end()) << f;
  const json report = json::parse(read_text((out / "nc_report.json").string()));
  EXPECT_EQ(report.at("variant"), "full");
  EXPECT_TRUE(report.at("test").contains("nc1"));
}

TEST_F(CliTest, DistillErrors) {
  EXPECT_EQ(run({"distill", "--config", write_config("s.json", student_config("full"))}).code, 3);
  train_teacher();
  EXPECT_EQ(run({"distill", "--config", path("s.json"), "--variant", "nope"}).code, 2);
  json other_data = student_config("full");
  other_data["data"]["seed"] = 99;
  const Result r = run({"distill", "--config", write_config("o.json", other_data)});
  EXPECT_EQ(r.code, 2);
  json wrong_k = student_config("full");
  wrong_k["data"]["k"] = 4;
  EXPECT_EQ(run({"distill", "--config", write_config("k.json", wrong_k)}).code, 2);
}

// Identity hidden layer over inputs that are constant within each class.
void write_collapsed_fixture(const std::string& ckpt, const std::string& csv) {
  Rng rng(0);
  Mlp m = init_mlp({3, {3}, 2}, rng);
  m.hidden[0].weight = Matrix::identity(3);
  save_checkpoint(ckpt, m, {}, Matrix::from_rows({{1, 0, 0}}));
  write_text(csv, "label,f0,f1,f2\n0,1,0,2\n0,1,0,2\n1,0,3,1\n1,0,3,1\n1,0,3,1\n");
}

TEST_F(CliTest, MetricsOnCollapsedModel) {
  write_collapsed_fixture(path("m.ckpt.json"), path("d.csv"));
  const Result a = run({"metrics", "--checkpoint", path("m.ckpt.json"), "--data", path("d.csv"),
                        "--out", path("m1"), "--pca"});
  ASSERT_EQ(a.code, 0) << a.err;
  const json report = json::parse(a.out);
  EXPECT_NEAR(report.at("nc1").get<double>(), 0.0, 1e-9);
  EXPECT_EQ(read_text(path("m1/nc_report.json")), a.out);

  const std::string pca = read_text(path("m1/pca.csv"));
  std::istringstream lines(pca);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "label,pc1,pc2");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 5u);

  const Result b = run({"metrics", "--checkpoint", path("m.ckpt.json"), "--data", path("d.csv")});
  EXPECT_EQ(b.out, a.out);
}

TEST_F(CliTest, MetricsErrors) {
  write_collapsed_fixture(path("m.ckpt.json"), path("d.csv"));
  write_text(path("wide.csv"), "label,f0,f1\n0,1,0\n1,0,1\n");
  EXPECT_EQ(run({"metrics", "--checkpoint", path("m.ckpt.json"), "--data", path("wide.csv")}).code, 2);
  EXPECT_EQ(run({"metrics", "--checkpoint", path("m.ckpt.json"), "--data", path("d.csv"), "--pca"}).code, 2);
  EXPECT_EQ(run({"metrics", "--checkpoint", path("none.json"), "--data", path("d.csv")}).code, 3);
  write_text(path("bad.csv"), "label,f0,f1,f2\n0,1,0,x\n");
  EXPECT_EQ(run({"metrics", "--checkpoint", path("m.ckpt.json"), "--data", path("bad.csv")}).code, 3);
}

TEST_F(CliTest, VerifySuites) {
  const Result etf = run({"verify", "--suite", "etf"});
  EXPECT_EQ(etf.code, 0) << etf.out;
  EXPECT_NE(etf.out.find("PASS etf K=16"), std::string::npos);
  EXPECT_EQ(etf.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(run({"verify", "--suite", "grad"}).code, 0);
  EXPECT_EQ(run({"verify", "--suite", "ufm"}).code, 0);
  EXPECT_EQ(run({"verify", "--suite", "bogus"}).code, 2);
}

TEST_F(CliTest, ThreadBudgetValidation) {
  ::setenv("NCKD_THREADS", "0", 1);
  EXPECT_THROW(thread_budget(), ConfigError);
  EXPECT_EQ(run({"verify", "--suite", "etf"}).code, 2);
  ::setenv("NCKD_THREADS", "4", 1);
  EXPECT_EQ(thread_budget(), 4u);
  ::setenv("NCKD_THREADS", "1", 1);
}

TEST(Variants, WeightRule) {
  LossWeights w;
  w.lambda1 = 0.5;
  w.lambda2 = 0.0;
  w.alpha = 0.0;
  LossWeights full = w;
  apply_variant(full, "full");
  EXPECT_EQ(full.lambda1, 0.5);
  EXPECT_EQ(full.lambda2, 1.0);
  EXPECT_EQ(full.alpha, 0.0);
  LossWeights kd = w;
  apply_variant(kd, "kd-only");
  EXPECT_EQ(kd.lambda1, 0.0);
  EXPECT_EQ(kd.lambda2, 0.0);
  EXPECT_EQ(kd.alpha, 1.0);
  LossWeights both = w;
  apply_variant(both, "full+kd");
  EXPECT_EQ(both.lambda1, 0.5);
  EXPECT_EQ(both.alpha, 1.0);
  EXPECT_THROW(apply_variant(both, "half"), ConfigError);
}

}  // namespace
}  // namespace nckd::cli
