#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nckd::cli {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Simplex ETF geometry for K = 2..16 in d = K+4.
std::vector<Check> verify_etf();

/// Largest finite-difference disagreement seen by one family of gradient checks.
struct GradFamilyResult {
  std::string family;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
};

/// Central differences with step 1e-5. The error of one case is
/// ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞).
std::vector<GradFamilyResult> gradient_check(std::uint64_t seed, std::size_t cases_per_family);
std::vector<Check> verify_grad();

/// Settings of the free-feature collapse run.
struct UfmHarness {
  std::size_t k = 8;
  std::size_t d = 16;
  std::size_t n_per_class = 64;
  std::size_t steps = 2000;
  double lr = 0.1;
  double sphere_radius = 0.03;
  std::uint64_t seed = 0;
};

struct UfmOutcome {
  double nc1 = 0.0;
  double nc2 = 0.0;
  std::size_t steps = 0;
  double final_lr = 0.0;
};

UfmOutcome run_ufm_harness(const UfmHarness& h);
std::vector<Check> verify_ufm();

/// "etf", "grad", "ufm" or "all". Throws ConfigError for other names.
std::vector<Check> run_suite(const std::string& name);

}  // namespace nckd::cli
