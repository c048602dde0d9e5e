#pragma once

// Experiment orchestration: configuration, seed tree, worker pool, checks
// and result files.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fpf/ensemble.hpp"
#include "fpf/linmodel.hpp"
#include "fpf/metrics.hpp"
#include "json.hpp"

namespace fpf {

enum class ExperimentKind { riccati_validation, exactness, stability, convergence, chaos };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::convergence;
  ModelParams model;
  TimeGrid grid;
  std::vector<std::int64_t> N_list;
  int n_trials = 200;
  int p = 1;
  VariantParams variant;
  std::uint64_t master_seed = 20240601;
  std::vector<double> checkpoints;

  // exactness and stability
  std::int64_t n_copies = 100000;
  InitialLaw::Kind initial_kind = InitialLaw::Kind::gaussian;
  Vec alt_mean;  // stability: second population's initial law
  Mat alt_cov;
  double fit_t_start = 0.5;
  double sample_every = 0.05;

  // convergence
  bool dt_bias_check = true;
  int n_boot = 1000;
  double synthetic_c = 0.0;  // test hook: > 0 replaces simulation by error = c / N

  // not part of the hash
  std::filesystem::path output_dir;
  int workers = 1;

  /// Acceptance defaults for each experiment (scalar A=-1, H=1, sigma_B=1,
  /// m0=0, Sigma0=1).
  static ExperimentConfig defaults(ExperimentKind kind);

  /// Starts from defaults(kind) and overrides the keys present in `j`.
  /// A present "experiment" key must agree with `kind`.
  static ExperimentConfig from_json(const nlohmann::json& j, ExperimentKind kind);
  static ExperimentConfig from_json(const nlohmann::json& j);

  nlohmann::json to_json() const;

  /// 16 hex digits of FNV-1a over the canonical JSON dump.
  std::string hash() const;

  void validate() const;
};

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct CurveRecord {
  std::string quantity;
  double t = 0.0;
  int level = 0;
  std::vector<CurvePoint> points;
};

struct FitRecord {
  std::string quantity;
  double t = 0.0;
  int level = 0;
  RateFit fit;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::string config_hash;
  std::vector<TrialRecord> trials;  // sorted by (N, trial, level, t, quantity)
  std::vector<CurveRecord> curves;
  std::vector<FitRecord> fits;
  std::vector<std::pair<std::string, std::string>> constants;
  std::vector<Check> checks;
  double wall_seconds = 0.0;

  bool all_passed() const;
  const Check* find_check(const std::string& name) const;
  const FitRecord* find_fit(const std::string& quantity, double t, int level = 0) const;
  const CurveRecord* find_curve(const std::string& quantity, double t, int level = 0) const;
};

/// Seed of one trial: (master seed, experiment name, N, trial index).
std::uint64_t trial_seed(std::uint64_t master_seed, const std::string& experiment, std::int64_t N,
                         std::uint64_t trial);

ExperimentResult run_riccati_validation(const ExperimentConfig& cfg);
ExperimentResult run_exactness(const ExperimentConfig& cfg);
ExperimentResult run_stability(const ExperimentConfig& cfg);
ExperimentResult run_convergence(const ExperimentConfig& cfg);
ExperimentResult run_chaos(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes trials.csv, curves.csv, fits.csv, constants.txt and config_echo.
/// Refuses (std::runtime_error) to write into a directory holding results
/// of a different config unless `force`.
void write_result(const ExperimentResult& result, const std::filesystem::path& dir, bool force);

void write_trials_csv(std::ostream& os, const ExperimentResult& result);

}  // namespace fpf
