#pragma once

// Linear-Gaussian signal and observation model:
//   dX = A X dt + sigma_B dB,   dZ = H X dt + dW,   X_0 ~ N(m0, Sigma0).

#include <cstdint>
#include <iosfwd>
#include <string>

#include "fpf/linalg.hpp"
#include "fpf/rng.hpp"
#include "json.hpp"

namespace fpf {

struct ModelParams {
  Mat A;        // d x d
  Mat H;        // m x d
  Mat sigma_B;  // d x d_B
  Mat Sigma_B;  // sigma_B sigma_B^T
  Vec m0;
  Mat Sigma0;
  int d = 0;
  int m = 0;
  int d_B = 0;

  /// Validates dimensions, symmetry and semi-definiteness and fills Sigma_B.
  /// Positive definiteness of Sigma_B is an assumption flag, not an error
  /// (see validate_assumptions).
  static ModelParams make(Mat A, Mat H, Mat sigma_B, Vec m0, Mat Sigma0);
  static ModelParams scalar(double a, double h, double sigma_b, double m0, double sigma0);

  bool is_scalar() const { return d == 1 && m == 1; }
  double a() const { return A(0, 0); }
  double h() const { return H(0, 0); }
};

/// Uniform time grid. `refinement` counts dt halvings relative to the grid
/// the noise streams were generated for; it selects the Brownian-bridge
/// level when drawing increments.
struct TimeGrid {
  double t0 = 0.0;
  double T = 0.0;
  double dt = 0.0;
  std::int64_t n_steps = 0;
  int refinement = 0;

  static TimeGrid make(double T, double dt);
  TimeGrid refined() const;

  double time(std::int64_t k) const { return t0 + static_cast<double>(k) * dt; }
  /// Nearest node index of time t; throws if t is off the grid by more than
  /// a rounding tolerance or outside [t0, T].
  std::int64_t node(double t) const;
};

/// Hidden state path; column k is X at t_k (n_steps + 1 columns).
struct TruthPath {
  TimeGrid grid;
  Mat states;
};

/// Column k is dZ_k = H X_{t_k} dt + dW_k (n_steps columns).
struct ObservationIncrements {
  TimeGrid grid;
  Mat dZ;
};

TruthPath simulate_truth(const ModelParams& params, const TimeGrid& grid, const NoiseBundle& noise);

/// Same as simulate_truth with a caller-supplied initial state.
TruthPath simulate_truth_from(const ModelParams& params, const TimeGrid& grid,
                              const NoiseBundle& noise, const Vec& x0);

ObservationIncrements simulate_observations(const ModelParams& params, const TimeGrid& grid,
                                            const TruthPath& truth, const NoiseBundle& noise);

struct AssumptionReport {
  bool detectable = false;     // (A, H)
  bool stabilizable = false;   // (A, sigma_B)
  bool a1 = false;
  bool a2 = false;             // Sigma_B positive definite
  bool a3 = false;             // A Hurwitz
  double mu_A = 0.0;           // min over eigenvalues of -Re(lambda)
  double lambda_min_Sigma_B = 0.0;

  std::string describe() const;
};

inline constexpr double kEigenRealTol = 1e-10;
inline constexpr double kSigmaBTol = 1e-12;

AssumptionReport validate_assumptions(const ModelParams& params);

/// Keys: d, m, d_B (optional, inferred from array lengths when absent),
/// A, H, sigma_B, m0, Sigma0 as row-major arrays.
ModelParams model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const ModelParams& p);

/// CSV with header time,component,value; one row per node and component.
void write_path_csv(std::ostream& os, const TruthPath& path);

}  // namespace fpf
