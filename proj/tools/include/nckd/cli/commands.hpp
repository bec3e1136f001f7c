#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nckd/cli/config.hpp"
#include "nckd/data.hpp"
#include "nckd/geometry.hpp"
#include "nckd/ncmetrics.hpp"

namespace nckd::cli {

enum ExitCode : int { kExitOk = 0, kExitVerifyFailed = 1, kExitConfig = 2, kExitIo = 3 };

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
};

struct LoadedData {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;  ///< data seed actually used (mixture only)
};

/// Generates (mixture) or reads (CSV) the train/test pair a config describes.
LoadedData load_data(const DataConfig& d, std::uint64_t run_seed);

/// Per-class raw means, global mean, normalized matrix and the hash of the
/// training split they were computed on.
nlohmann::json centroids_to_json(const CentroidSet& c, const std::string& train_hash);
CentroidSet centroids_from_json(const nlohmann::json& j);

nlohmann::json report_to_json(const NcReport& r, double accuracy, std::size_t n);

/// Each command throws on failure; run_cli maps exceptions to exit codes.
void cmd_train_teacher(const std::string& config_path, const Overrides& o, std::ostream& out);
void cmd_distill(const std::string& config_path, const Overrides& o, std::ostream& out);
void cmd_metrics(const std::string& checkpoint, const std::string& data_csv,
                 const std::optional<std::string>& out_dir, bool pca, std::ostream& out);
/// Returns false when any check failed.
bool cmd_verify(const std::string& suite, std::ostream& out);

/// Full command-line entry point: args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads NCKD_THREADS (default 1). Throws ConfigError when it is not a positive integer.
std::size_t thread_budget();

}  // namespace nckd::cli
