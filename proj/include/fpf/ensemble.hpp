#pragma once

// Interacting particle system of the linear feedback particle filter and its
// exact mean-field family
//
//   dX = A X dt + g1 sigma_B dB + (1 - g1^2)/2 S^{-1} (X - m) dt
//        + K (dZ - H ((1 - g2^2) m + (1 + g2^2) X) / 2 dt + g2 dW),  K = S H^T
//
// with (m, S) the empirical moments for the finite-N system and the Kalman
// moments for mean-field copies. (g1, g2) = (1, 0) is the stochastic linear
// FPF, (1, 1) the EnKBF with perturbed observations, (0, 0) the deterministic
// linear FPF.

#include <iosfwd>
#include <utility>

#include "fpf/kalman.hpp"
#include "fpf/linmodel.hpp"
#include "fpf/rng.hpp"

namespace fpf {

struct VariantParams {
  double gamma1 = 1.0;
  double gamma2 = 0.0;

  static VariantParams stochastic_fpf() { return {1.0, 0.0}; }
  static VariantParams perturbed_enkbf() { return {1.0, 1.0}; }
  static VariantParams deterministic_fpf() { return {0.0, 0.0}; }

  void validate() const;
  bool needs_inverse() const { return gamma1 < 1.0; }
};

/// Initial law of particles: Gaussian, or a skewed law with the same first two
/// moments built from a unit exponential per coordinate (m + L (E - 1), L L^T = cov).
struct InitialLaw {
  enum class Kind { gaussian, exponential };
  Kind kind = Kind::gaussian;
  Vec mean;
  Mat cov;

  static InitialLaw prior(const ModelParams& p) { return {Kind::gaussian, p.m0, p.Sigma0}; }

  /// Columns are draws for lanes (particles) first .. first + count - 1.
  Mat sample(const NoiseBundle& noise, std::uint64_t first, std::int64_t count) const;
};

/// Column i holds particle i.
struct Ensemble {
  double t = 0.0;
  std::uint64_t step = 0;  // increments consumed so far
  Mat states;
  VariantParams variant;

  Eigen::Index size() const { return states.cols(); }
  Eigen::Index dim() const { return states.rows(); }
};

struct EnsembleStats {
  Vec mean;
  CovMatrix cov;  // divisor N - 1
  Mat errors;     // column i: X^i - mean
};

Ensemble init_ensemble(const ModelParams& params, Eigen::Index N, VariantParams variant,
                       const NoiseBundle& noise);
Ensemble init_ensemble(const InitialLaw& law, Eigen::Index N, VariantParams variant,
                       const NoiseBundle& noise);

EnsembleStats empirical_stats(const Ensemble& ens);

/// Standardized noise for one step: dB columns are particles (d_B rows),
/// dW columns are the perturbed-observation draws (m rows, empty unless
/// gamma2 != 0).
struct StepNoise {
  Mat dB;
  Mat dW;
};

/// Stream of the perturbed-observation draws W-bar^i belonging to `noise`.
NoiseBundle perturbed_obs_stream(const NoiseBundle& noise);

StepNoise draw_step_noise(const NoiseBundle& noise, std::uint64_t step, int refinement,
                          Eigen::Index N, const ModelParams& params, VariantParams variant);

/// Applies one explicit step of the variant dynamics to `states` with the
/// interaction moments (mean, cov) frozen at the start of the step.
/// Throws NumericalError when gamma1 < 1 and cov is (near) singular.
void advance_states(Mat& states, const Vec& mean, const CovMatrix& cov, const Vec& dZ, double dt,
                    const ModelParams& params, VariantParams variant, const StepNoise& noise);

/// Finite-N step. `stats` must be the statistics of `ens`.
Ensemble fpf_step(const Ensemble& ens, const EnsembleStats& stats, const Vec& dZ, double dt,
                  const ModelParams& params, const NoiseBundle& noise, int refinement = 0);

/// Particles and their coupled mean-field copies: copy i starts at particle
/// i's initial state and consumes the same dB^i.
struct CoupledSystem {
  Ensemble ensemble;
  Mat copies;
  std::uint64_t copies_step = 0;
};

CoupledSystem init_coupled(const InitialLaw& law, Eigen::Index N, VariantParams variant,
                           const NoiseBundle& noise);

struct CoupledOptions {
  bool force_exact_gain = false;  // test hook: particles use the Kalman covariance in their gain
  int refinement = 0;
};

/// Advances both systems one step. kf_state is the Kalman state at the start
/// of the step.
CoupledSystem coupled_step(const CoupledSystem& sys, const FilterState& kf_state, const Vec& dZ,
                           double dt, const ModelParams& params, const NoiseBundle& noise,
                           const CoupledOptions& opts = {});

/// xi^i = X^i - m^(N) and xi_bar^i = X_bar^i - m_t.
std::pair<Mat, Mat> error_processes(const CoupledSystem& sys, const FilterState& kf_state);

/// CSV: time,particle,x_0..x_{d-1}.
void write_ensemble_csv(std::ostream& os, const Ensemble& ens, bool header = true);

}  // namespace fpf
