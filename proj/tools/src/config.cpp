#include "nckd/cli/config.hpp"

#include <algorithm>
#include <set>

namespace nckd::cli {

using nlohmann::json;

namespace {

// Reads an object's keys one at a time and rejects whatever is left over.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  const json* take(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = take(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
    return v->get<double>();
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const json* v = take(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a nonnegative integer");
    return v->get<std::size_t>();
  }

  std::optional<std::uint64_t> optional_u64(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a nonnegative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = take(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = take(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
    return v->get<std::string>();
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    const json* v = take(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(where(key) + " must be an array of integers");
    std::vector<std::size_t> out;
    for (const json& e : *v) {
      if (!e.is_number_unsigned()) throw ConfigError(where(key) + " must be an array of integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::string where(const std::string& key = "") const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? "config" : "'" + p + "'";
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError("unknown key '" + child(key) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class F>
void validated(const std::string& what, F&& check) {
  try {
    check();
  } catch (const ContractViolation& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

DataConfig parse_data(const json* j) {
  DataConfig d;
  if (!j) return d;
  ObjectReader r(*j, "data");
  const std::string source = r.string("source", "mixture");
  if (source == "mixture") {
    d.source = DataSource::Mixture;
    d.mixture.k = r.count("k", d.mixture.k);
    d.mixture.d = r.count("d", d.mixture.d);
    d.mixture.n_per_class = r.count("n_per_class", d.mixture.n_per_class);
    d.mixture.center_separation = r.number("center_separation", d.mixture.center_separation);
    d.mixture.within_class_std = r.number("within_class_std", d.mixture.within_class_std);
    const std::string placement = r.string("placement", "etf");
    if (placement == "etf") {
      d.mixture.placement = CenterPlacement::Etf;
    } else if (placement == "orthogonal") {
      d.mixture.placement = CenterPlacement::RandomOrthogonal;
    } else {
      throw ConfigError("'data.placement' must be \"etf\" or \"orthogonal\", got \"" + placement + "\"");
    }
    d.test_fraction = r.number("test_fraction", d.test_fraction);
    d.seed = r.optional_u64("seed");
    validated("data", [&] { d.mixture.validate(); });
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
      throw ConfigError("'data.test_fraction' must lie in (0, 1)");
  } else if (source == "csv") {
    d.source = DataSource::Csv;
    d.train_csv = r.string("train", "");
    d.test_csv = r.string("test", "");
    if (d.train_csv.empty() || d.test_csv.empty())
      throw ConfigError("'data' with source \"csv\" needs both 'train' and 'test' paths");
  } else {
    throw ConfigError("'data.source' must be \"mixture\" or \"csv\", got \"" + source + "\"");
  }
  r.finish();
  return d;
}

std::vector<std::size_t> parse_hidden(const json* j, std::vector<std::size_t> fallback) {
  if (!j) return fallback;
  ObjectReader r(*j, "model");
  auto hidden = r.counts("hidden", std::move(fallback));
  r.finish();
  if (hidden.empty()) throw ConfigError("'model.hidden' needs at least one layer");
  if (std::find(hidden.begin(), hidden.end(), std::size_t{0}) != hidden.end())
    throw ConfigError("'model.hidden' widths must be positive");
  return hidden;
}

void parse_train(const json* j, DistillConfig& c) {
  if (!j) return;
  ObjectReader r(*j, "train");
  c.lr = r.number("lr", c.lr);
  c.momentum = r.number("momentum", c.momentum);
  c.weight_decay = r.number("weight_decay", c.weight_decay);
  c.epochs = r.count("epochs", c.epochs);
  c.batch_size = r.count("batch_size", c.batch_size);
  c.milestones = r.counts("milestones", c.milestones);
  c.lr_factor = r.number("lr_factor", c.lr_factor);
  c.log_wallclock = r.boolean("log_wallclock", c.log_wallclock);
  r.finish();
}

void parse_loss(const json* j, LossWeights& w) {
  if (!j) return;
  ObjectReader r(*j, "loss");
  w.lambda1 = r.number("lambda1", w.lambda1);
  w.lambda2 = r.number("lambda2", w.lambda2);
  w.alpha = r.number("alpha", w.alpha);
  w.tau_proto = r.number("tau_proto", w.tau_proto);
  w.tau_kd = r.number("tau_kd", w.tau_kd);
  r.finish();
}

void parse_head(const json* j, DistillConfig& c) {
  if (!j) return;
  ObjectReader r(*j, "head");
  try {
    c.head = head_mode_from_string(r.string("mode", to_string(c.head)));
    c.centroid_source =
        centroid_source_from_string(r.string("centroid_source", to_string(c.centroid_source)));
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("'head': ") + e.what());
  }
  c.head_scale = r.number("scale", c.head_scale);
  r.finish();
}

void parse_distill_block(const json* j, DistillConfig& c) {
  if (!j) return;
  ObjectReader r(*j, "distill");
  c.ema_beta = r.number("ema_beta", c.ema_beta);
  if (auto layer = r.optional_u64("layer")) c.distill_layer = static_cast<std::size_t>(*layer);
  c.proto_centered = r.boolean("proto_centered", c.proto_centered);
  c.isometric_projector = r.boolean("isometric_projector", c.isometric_projector);
  r.finish();
}

json data_json(const DataConfig& d) {
  json j;
  if (d.source == DataSource::Csv) {
    j["source"] = "csv";
    j["train"] = d.train_csv;
    j["test"] = d.test_csv;
    return j;
  }
  j["source"] = "mixture";
  j["k"] = d.mixture.k;
  j["d"] = d.mixture.d;
  j["n_per_class"] = d.mixture.n_per_class;
  j["center_separation"] = d.mixture.center_separation;
  j["within_class_std"] = d.mixture.within_class_std;
  j["placement"] = d.mixture.placement == CenterPlacement::Etf ? "etf" : "orthogonal";
  j["test_fraction"] = d.test_fraction;
  if (d.seed) j["seed"] = *d.seed;
  return j;
}

json train_json(const DistillConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["milestones"] = c.resolved_milestones();
  j["lr_factor"] = c.lr_factor;
  j["log_wallclock"] = c.log_wallclock;
  return j;
}

}  // namespace

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"plain", "kd-only", "nc1-only", "nc2-only", "full", "full+kd"};
  return names;
}

void apply_variant(LossWeights& w, const std::string& variant) {
  const auto on = [](double v) { return v > 0.0 ? v : 1.0; };
  if (variant == "plain") {
    w.lambda1 = w.lambda2 = w.alpha = 0.0;
  } else if (variant == "kd-only") {
    w.lambda1 = w.lambda2 = 0.0;
    w.alpha = on(w.alpha);
  } else if (variant == "nc1-only") {
    w.lambda1 = on(w.lambda1);
    w.lambda2 = w.alpha = 0.0;
  } else if (variant == "nc2-only") {
    w.lambda2 = on(w.lambda2);
    w.lambda1 = w.alpha = 0.0;
  } else if (variant == "full") {
    w.lambda1 = on(w.lambda1);
    w.lambda2 = on(w.lambda2);
    w.alpha = 0.0;
  } else if (variant == "full+kd") {
    w.lambda1 = on(w.lambda1);
    w.lambda2 = on(w.lambda2);
    w.alpha = on(w.alpha);
  } else {
    throw ConfigError("unknown variant '" + variant +
                      "' (expected plain, kd-only, nc1-only, nc2-only, full or full+kd)");
  }
}

TeacherRunConfig parse_teacher_config(const json& j) {
  ObjectReader r(j, "");
  TeacherRunConfig c;
  c.train.lr = 0.1;
  c.data = parse_data(r.take("data"));
  c.hidden = parse_hidden(r.take("model"), c.hidden);
  parse_train(r.take("train"), c.train);
  c.train.seed = r.optional_u64("seed").value_or(0);
  c.out = r.string("out", "");
  r.finish();
  validated("train", [&] { c.train.validate(); });
  return c;
}

DistillRunConfig parse_distill_config(const json& j) {
  ObjectReader r(j, "");
  DistillRunConfig c;
  c.data = parse_data(r.take("data"));
  c.teacher = r.string("teacher", "");
  if (c.teacher.empty()) throw ConfigError("'teacher' (directory of a train-teacher run) is required");
  c.hidden = parse_hidden(r.take("model"), c.hidden);
  parse_train(r.take("train"), c.train);
  parse_loss(r.take("loss"), c.train.weights);
  parse_head(r.take("head"), c.train);
  parse_distill_block(r.take("distill"), c.train);
  c.variant = r.string("variant", c.variant);
  c.train.seed = r.optional_u64("seed").value_or(0);
  c.out = r.string("out", "");
  r.finish();
  apply_variant(c.train.weights, c.variant);
  validated("config", [&] { c.train.validate(); });
  return c;
}

json to_json(const TeacherRunConfig& c) {
  json j;
  j["data"] = data_json(c.data);
  j["model"]["hidden"] = c.hidden;
  j["train"] = train_json(c.train);
  j["seed"] = c.train.seed;
  j["out"] = c.out;
  return j;
}

json to_json(const DistillRunConfig& c) {
  json j;
  j["data"] = data_json(c.data);
  j["teacher"] = c.teacher;
  j["model"]["hidden"] = c.hidden;
  j["train"] = train_json(c.train);
  const LossWeights& w = c.train.weights;
  j["loss"] = {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"alpha", w.alpha},
               {"tau_proto", w.tau_proto}, {"tau_kd", w.tau_kd}};
  j["head"] = {{"mode", to_string(c.train.head)},
               {"scale", c.train.head_scale},
               {"centroid_source", to_string(c.train.centroid_source)}};
  j["distill"]["ema_beta"] = c.train.ema_beta;
  j["distill"]["proto_centered"] = c.train.proto_centered;
  j["distill"]["isometric_projector"] = c.train.isometric_projector;
  if (c.train.distill_layer) j["distill"]["layer"] = *c.train.distill_layer;
  j["variant"] = c.variant;
  j["seed"] = c.train.seed;
  j["out"] = c.out;
  return j;
}

json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
}

}  // namespace nckd::cli
