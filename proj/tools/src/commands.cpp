#include "nckd/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>

#include "nckd/cli/verify.hpp"
#include "nckd/io.hpp"
#include "nckd/model.hpp"
#include "nckd/trainer.hpp"

namespace nckd::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a non-empty array of rows");
  std::vector<std::vector<double>> rows;
  for (const json& r : j) rows.push_back(r.get<std::vector<double>>());
  for (const auto& r : rows)
    if (r.size() != rows.front().size()) throw ConfigError(what + " has ragged rows");
  return Matrix::from_rows(rows);
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

// Writes files under one run directory and remembers their content hashes.
class RunWriter {
 public:
  explicit RunWriter(std::string dir) : dir_(std::move(dir)) { make_dir(dir_); }

  void write(const std::string& rel, const std::string& contents) {
    const fs::path path = fs::path(dir_) / rel;
    if (path.has_parent_path()) make_dir(path.parent_path().string());
    write_text(path.string(), contents);
    entries_.push_back({rel, content_hash(contents), contents.size()});
  }

  void finish(const std::string& command, const std::string& config_hash) {
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& a, const Entry& b) { return a.path < b.path; });
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["outputs"] = json::array();
    for (const Entry& e : entries_)
      j["outputs"].push_back({{"path", e.path}, {"hash", e.hash}, {"bytes", e.bytes}});
    write_text((fs::path(dir_) / "manifest.json").string(), dump(j));
  }

 private:
  struct Entry {
    std::string path;
    std::string hash;
    std::size_t bytes;
  };

  static void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  }

  std::string dir_;
  std::vector<Entry> entries_;
};

json read_config(const std::string& path, const Overrides& o) {
  json j = parse_json_text(read_text(path), path);
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  if (o.seed) j["seed"] = *o.seed;
  if (o.out) j["out"] = *o.out;
  if (o.variant) j["variant"] = *o.variant;
  return j;
}

Matrix probe_rows(const Matrix& x) {
  const std::size_t n = std::min<std::size_t>(8, x.rows());
  Matrix p(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = x.row(i);
    std::copy(src.begin(), src.end(), p.row(i).begin());
  }
  return p;
}

json mixture_json(const MixtureSpec& m) {
  return {{"k", m.k},
          {"d", m.d},
          {"n_per_class", m.n_per_class},
          {"center_separation", m.center_separation},
          {"within_class_std", m.within_class_std},
          {"placement", m.placement == CenterPlacement::Etf ? "etf" : "orthogonal"}};
}

void write_generated_data(RunWriter& w, const DataConfig& d, const LoadedData& data) {
  const std::string train_csv = to_csv(data.train);
  const std::string test_csv = to_csv(data.test);
  w.write("data/train.csv", train_csv);
  w.write("data/test.csv", test_csv);
  json m;
  m["k"] = data.train.k;
  m["d"] = data.train.dim();
  m["seed"] = data.seed;
  m["spec"] = mixture_json(d.mixture);
  m["test_fraction"] = d.test_fraction;
  m["counts"] = {{"train", data.train.counts}, {"test", data.test.counts}};
  m["hashes"] = {{"train.csv", content_hash(train_csv)}, {"test.csv", content_hash(test_csv)}};
  w.write("data/dataset.json", dump(m));
}

json final_report(const Mlp& m, const Dataset& train, const Dataset& test) {
  const Evaluation tr = evaluate(m, train);
  const Evaluation te = evaluate(m, test);
  json j;
  j["train"] = report_to_json(tr.report, tr.accuracy, train.size());
  j["test"] = report_to_json(te.report, te.accuracy, test.size());
  return j;
}

void print_summary(std::ostream& out, const std::string& what, const TrainLog& log,
                   const std::string& dir) {
  char buf[256];
  if (log.records.empty()) {
    std::snprintf(buf, sizeof buf, "%s: no epochs run -> %s\n", what.c_str(), dir.c_str());
  } else {
    const EpochRecord& r = log.records.back();
    std::snprintf(buf, sizeof buf,
                  "%s: epochs=%zu acc_train=%.4f acc_test=%.4f nc1=%.4g nc2=%.4g nc3=%.4g -> %s\n",
                  what.c_str(), log.records.size(), r.acc_train, r.acc_test, r.nc1, r.nc2, r.nc3,
                  dir.c_str());
  }
  out << buf;
}

}  // namespace

std::size_t thread_budget() {
  const char* raw = std::getenv("NCKD_THREADS");
  if (!raw || !*raw) return 1;
  const std::string s(raw);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v < 1)
    throw ConfigError("NCKD_THREADS must be a positive integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

LoadedData load_data(const DataConfig& d, std::uint64_t run_seed) {
  LoadedData out;
  if (d.source == DataSource::Csv) {
    out.train = load_csv(d.train_csv);
    out.test = load_csv(d.test_csv);
    if (out.train.dim() != out.test.dim())
      throw ConfigError("train and test CSV files differ in feature count");
    const std::size_t k = std::max(out.train.k, out.test.k);
    if (out.train.k != k) out.train = Dataset::make(out.train.features, out.train.labels, k);
    if (out.test.k != k) out.test = Dataset::make(out.test.features, out.test.labels, k);
    return out;
  }
  out.seed = d.seed.value_or(run_seed);
  const Rng root(out.seed);
  Rng data_rng = root.split("data");
  const Dataset all = gaussian_mixture(d.mixture, data_rng);
  Rng split_rng = root.split("split");
  Split s = split(all, d.test_fraction, split_rng);
  out.train = std::move(s.train);
  out.test = std::move(s.test);
  return out;
}

json centroids_to_json(const CentroidSet& c, const std::string& train_hash) {
  json j;
  j["format"] = "nckd-centroids/1";
  j["k"] = c.k();
  j["d"] = c.dim();
  j["counts"] = c.counts;
  j["balanced"] = c.balanced;
  j["class_means"] = matrix_json(c.class_means);
  j["global_mean"] = c.global_mean;
  j["normalized"] = matrix_json(c.normalized);
  j["train_hash"] = train_hash;
  return j;
}

CentroidSet centroids_from_json(const json& j) {
  try {
    if (j.at("format") != "nckd-centroids/1") throw ConfigError("centroid file has an unknown format");
    CentroidSet c;
    c.class_means = matrix_from_json(j.at("class_means"), "class_means");
    c.normalized = matrix_from_json(j.at("normalized"), "normalized");
    c.global_mean = j.at("global_mean").get<std::vector<double>>();
    c.counts = j.at("counts").get<std::vector<std::size_t>>();
    c.balanced = j.at("balanced").get<bool>();
    if (c.normalized.rows() != c.k() || c.normalized.cols() != c.dim() ||
        c.global_mean.size() != c.dim() || c.counts.size() != c.k())
      throw ConfigError("centroid file has inconsistent shapes");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("centroid file is malformed: ") + e.what());
  }
}

json report_to_json(const NcReport& r, double accuracy, std::size_t n) {
  json j;
  j["accuracy"] = accuracy;
  j["n"] = n;
  j["k"] = r.k;
  j["d"] = r.d;
  j["balanced"] = r.balanced;
  j["nc1"] = r.nc1;
  j["nc2"] = r.nc2;
  j["nc3"] = r.nc3;
  return j;
}

void cmd_train_teacher(const std::string& config_path, const Overrides& o, std::ostream& out) {
  TeacherRunConfig cfg = parse_teacher_config(read_config(config_path, o));
  if (cfg.out.empty()) throw ConfigError("no output directory: set 'out' or pass --out");
  thread_budget();

  const LoadedData data = load_data(cfg.data, cfg.train.seed);
  if (cfg.data.source == DataSource::Mixture) cfg.data.seed = data.seed;
  const std::string resolved = dump(to_json(cfg));
  const std::string config_hash = content_hash(resolved);

  const LayerSpec spec{data.train.dim(), cfg.hidden, data.train.k};
  const TrainResult tr = train_teacher(spec, cfg.train, data.train, data.test);
  const CentroidSet centroids = extract_teacher_centroids(tr.model, data.train);

  RunWriter w(cfg.out);
  w.write("config.resolved.json", resolved);
  if (cfg.data.source == DataSource::Mixture) write_generated_data(w, cfg.data, data);
  w.write("teacher.ckpt.json",
          checkpoint_to_json(tr.model, {cfg.train.seed, config_hash}, probe_rows(data.train.features)));
  w.write("centroids.json", dump(centroids_to_json(centroids, content_hash(to_csv(data.train)))));
  w.write("trainlog.jsonl", tr.log.to_jsonl());
  w.finish("train-teacher", config_hash);
  print_summary(out, "teacher", tr.log, cfg.out);
}

void cmd_distill(const std::string& config_path, const Overrides& o, std::ostream& out) {
  DistillRunConfig cfg = parse_distill_config(read_config(config_path, o));
  if (cfg.out.empty()) throw ConfigError("no output directory: set 'out' or pass --out");
  thread_budget();

  const fs::path tdir(cfg.teacher);
  Checkpoint ckpt = load_checkpoint((tdir / "teacher.ckpt.json").string());
  const std::string centroid_path = (tdir / "centroids.json").string();
  const json centroid_json = parse_json_text(read_text(centroid_path), centroid_path);
  const CentroidSet centroids = centroids_from_json(centroid_json);
  const std::string stored_hash = centroid_json.value("train_hash", "");

  const LoadedData data = load_data(cfg.data, cfg.train.seed);
  if (cfg.data.source == DataSource::Mixture) cfg.data.seed = data.seed;
  if (ckpt.model.input_dim() != data.train.dim())
    throw ConfigError("teacher expects " + std::to_string(ckpt.model.input_dim()) +
                      " input features, data has " + std::to_string(data.train.dim()));
  if (centroids.k() != data.train.k)
    throw ConfigError("teacher centroids cover " + std::to_string(centroids.k()) +
                      " classes, data has " + std::to_string(data.train.k));
  if (stored_hash != content_hash(to_csv(data.train)))
    throw ConfigError("teacher centroids were computed on a different training split");

  const std::string resolved = dump(to_json(cfg));
  const std::string config_hash = content_hash(resolved);
  const Teacher teacher{std::move(ckpt.model), centroids};
  const LayerSpec spec{data.train.dim(), cfg.hidden, data.train.k};
  const TrainResult tr = distill(teacher, spec, cfg.train, data.train, data.test);

  RunWriter w(cfg.out);
  w.write("config.resolved.json", resolved);
  w.write("student.ckpt.json",
          checkpoint_to_json(tr.model, {cfg.train.seed, config_hash}, probe_rows(data.train.features)));
  w.write("trainlog.jsonl", tr.log.to_jsonl());
  json report = final_report(tr.model, data.train, data.test);
  report["variant"] = cfg.variant;
  w.write("nc_report.json", dump(report));
  w.finish("distill", config_hash);
  print_summary(out, "student (" + cfg.variant + ")", tr.log, cfg.out);
}

void cmd_metrics(const std::string& checkpoint, const std::string& data_csv,
                 const std::optional<std::string>& out_dir, bool pca, std::ostream& out) {
  thread_budget();
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  Dataset data = load_csv(data_csv);
  const Mlp& m = ckpt.model;
  if (data.dim() != m.input_dim())
    throw DimensionError("checkpoint expects " + std::to_string(m.input_dim()) +
                         " features, " + data_csv + " has " + std::to_string(data.dim()));
  if (data.k > m.classes())
    throw DimensionError("dataset has labels up to " + std::to_string(data.k - 1) +
                         ", checkpoint has " + std::to_string(m.classes()) + " classes");
  if (data.k < m.classes()) data = Dataset::make(data.features, data.labels, m.classes());

  const Evaluation ev = evaluate(m, data);
  const std::string text = dump(report_to_json(ev.report, ev.accuracy, data.size()));
  out << text;
  if (!out_dir) {
    if (pca) throw ConfigError("--pca needs --out");
    return;
  }
  RunWriter w(*out_dir);
  w.write("nc_report.json", text);
  if (pca) {
    const PcaResult p = pca_project(forward(m, data.features).penultimate(), 2);
    std::string csv = "label,pc1,pc2\n";
    char buf[96];
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", data.labels[i], p.coords(i, 0), p.coords(i, 1));
      csv += buf;
    }
    w.write("pca.csv", csv);
  }
  w.finish("metrics", content_hash(checkpoint + "\n" + data_csv));
}

bool cmd_verify(const std::string& suite, std::ostream& out) {
  thread_budget();
  const std::vector<Check> checks = run_suite(suite);
  std::size_t passed = 0;
  for (const Check& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) out << "  " << c.detail;
    out << '\n';
    if (c.passed) ++passed;
  }
  out << passed << "/" << checks.size() << " checks passed\n";
  if (passed != checks.size()) {
    out << "failures:";
    for (const Check& c : checks)
      if (!c.passed) out << ' ' << c.name;
    out << '\n';
  }
  return passed == checks.size();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural-collapse-guided knowledge distillation on small MLPs", "nckd"};
  app.require_subcommand(1);

  std::string config;
  Overrides o;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string variant;

  auto* teacher = app.add_subcommand("train-teacher", "Train a teacher network and extract its centroids");
  teacher->add_option("--config", config, "JSON config")->required();
  teacher->add_option("--out", out_dir, "Output directory (overrides the config)");
  teacher->add_option("--seed", seed, "Seed (overrides the config)");

  auto* dist = app.add_subcommand("distill", "Train a student against a teacher run");
  dist->add_option("--config", config, "JSON config")->required();
  dist->add_option("--out", out_dir, "Output directory (overrides the config)");
  dist->add_option("--seed", seed, "Seed (overrides the config)");
  dist->add_option("--variant", variant, "plain, kd-only, nc1-only, nc2-only, full or full+kd");

  std::string checkpoint, data;
  bool pca = false;
  auto* metrics = app.add_subcommand("metrics", "NC metrics of a checkpoint on a CSV dataset");
  metrics->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  metrics->add_option("--data", data, "CSV dataset")->required();
  metrics->add_option("--out", out_dir, "Directory for nc_report.json and pca.csv");
  metrics->add_flag("--pca", pca, "Also write a 2-D PCA projection of penultimate features");

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "Run self-checks");
  verify->add_option("--suite", suite, "etf, grad, ufm or all");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  auto collect = [&](CLI::App* sub) {
    if (sub->count("--out")) o.out = out_dir;
    if (sub->count("--seed")) o.seed = seed;
    if (sub->get_option_no_throw("--variant") && sub->count("--variant")) o.variant = variant;
  };

  try {
    if (teacher->parsed()) {
      collect(teacher);
      cmd_train_teacher(config, o, out);
    } else if (dist->parsed()) {
      collect(dist);
      cmd_distill(config, o, out);
    } else if (metrics->parsed()) {
      cmd_metrics(checkpoint, data, metrics->count("--out") ? std::optional(out_dir) : std::nullopt,
                  pca, out);
    } else if (verify->parsed()) {
      return cmd_verify(suite, out) ? kExitOk : kExitVerifyFailed;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitVerifyFailed;
  }
  return kExitOk;
}

}  // namespace nckd::cli
