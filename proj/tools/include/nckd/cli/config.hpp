#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nckd/data.hpp"
#include "nckd/error.hpp"
#include "nckd/trainer.hpp"

namespace nckd::cli {

/// Malformed config, unknown key, out-of-range value or bad flag.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class DataSource { Mixture, Csv };

struct DataConfig {
  DataSource source = DataSource::Mixture;
  MixtureSpec mixture;
  double test_fraction = 1.0 / 3.0;
  std::optional<std::uint64_t> seed;  ///< falls back to the run seed
  std::string train_csv;
  std::string test_csv;
};

struct TeacherRunConfig {
  DataConfig data;
  std::vector<std::size_t> hidden{256, 256};
  DistillConfig train;
  std::string out;
};

struct DistillRunConfig {
  DataConfig data;
  std::string teacher;  ///< directory written by train-teacher
  std::vector<std::size_t> hidden{16};
  DistillConfig train;
  std::string variant = "full";
  std::string out;
};

/// plain, kd-only, nc1-only, nc2-only, full, full+kd.
const std::vector<std::string>& variant_names();

/// Switches loss terms on or off for a variant. A term that is switched on
/// keeps its configured weight, or gets weight 1 when that weight is 0.
void apply_variant(LossWeights& w, const std::string& variant);

TeacherRunConfig parse_teacher_config(const nlohmann::json& j);
DistillRunConfig parse_distill_config(const nlohmann::json& j);

nlohmann::json to_json(const TeacherRunConfig& c);
nlohmann::json to_json(const DistillRunConfig& c);

/// Parses JSON text; syntax errors become ConfigError.
nlohmann::json parse_json_text(const std::string& text, const std::string& source);

}  // namespace nckd::cli
