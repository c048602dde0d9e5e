#pragma once

// Riccati vector fields, the differential Riccati equation (DRE), its steady
// state (ARE), the two linear transition flows built on them and the
// stability constants that quantify their decay.
//
//   Ricc(Q)      = A Q + Q A^T + Sigma_B - Q H^T H Q
//   sqrtRicc(Q)  = A - 1/2 Q H^T H
//   Phi flow:  d/dt Phi_{t,s} = (A - Sigma_t H^T H) Phi_{t,s}
//   Psi flow:  d/dt Psi_{t,s} = sqrtRicc(Q_t) Psi_{t,s}

#include <string>
#include <vector>

#include "fpf/linalg.hpp"
#include "fpf/linmodel.hpp"

namespace fpf {

using CovMatrix = Mat;

Mat ricc_rhs(const CovMatrix& Q, const ModelParams& params);
Mat sqrt_ricc(const CovMatrix& Q, const ModelParams& params);

/// Tolerance on the smallest eigenvalue, relative to max(1, |Sigma|), below
/// which an integrated covariance counts as having lost semi-definiteness.
inline constexpr double kPsdTol = 1e-10;

/// One classical RK4 step of the DRE; the result is symmetrized and checked
/// for semi-definiteness (NumericalError on failure).
CovMatrix dre_rk4_step(const CovMatrix& sigma, const ModelParams& params, double h);

/// Matrix-valued function sampled on a uniform grid. Values between nodes
/// come from cubic Lagrange interpolation over the four surrounding nodes,
/// which keeps RK4 fourth-order accurate at stage midpoints.
struct MatrixPath {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<Mat> nodes;

  double t_end() const { return t0 + dt * static_cast<double>(nodes.size() - 1); }
  const Mat& node(std::size_t k) const { return nodes.at(k); }
  Mat at(double t) const;
};

/// DRE path on the grid nodes, starting from sigma0 at grid.t0.
MatrixPath integrate_dre(const CovMatrix& sigma0, const ModelParams& params, const TimeGrid& grid);

struct StabilityConstants {
  CovMatrix Sigma_inf;
  Mat F_inf;               // A - Sigma_inf H^T H
  double lambda0 = 0.0;    // min over eigenvalues of F_inf of -Re(lambda)
  double beta = 0.0;       // lambda_min(Sigma_B) / (2 lambda_max(Sigma_inf))
  double alpha = 0.0;      // exp(sqrt(cond) M1 |H^T H| / (2 beta)) sqrt(cond)
  double M1_hat = 0.0;     // sup_t |Sigma_t - Sigma_inf|_2 exp(m1_rate t)
  double lambda_fit = 0.0; // 0.9 lambda0
  double m1_rate = 0.0;    // max(2 lambda_fit, beta)
  double are_residual = 0.0;  // |Ricc(Sigma_inf)|_F
  std::vector<double> residual_history;

  /// key = value lines: sigma_inf, f_inf, lambda0, alpha, beta, m1_hat,
  /// are_residual, lambda_fit, m1_rate.
  std::string report() const;
};

struct AreOptions {
  double burn_in_tol = 1e-6;            // relative residual that ends the burn-in
  std::int64_t max_burn_in_steps = 4'000'000;
  int max_newton_iterations = 60;
  double residual_tol = 1e-8;           // |Ricc|_F <= tol (1 + |Sigma|_F)
  double fit_horizon_factor = 12.0;     // M1 fitted on [0, factor / lambda0]
};

/// Steady state of the DRE: DRE burn-in from the identity followed by Newton
/// refinement on the ARE residual, then the decay constants. Requires A1.
StabilityConstants solve_are(const ModelParams& params, const AreOptions& opts = {});

/// Envelope constant sup_t |Sigma_t - Sigma_inf|_2 e^{rate t} of the DRE
/// started at sigma0.
double fit_m1(const CovMatrix& sigma0, const CovMatrix& sigma_inf, const ModelParams& params,
              double rate, double horizon);

/// int_0^t e^{F^T s} W e^{F s} ds by adaptive Gauss-Legendre quadrature.
Mat observability_gramian(const Mat& F, const Mat& W, double t, double abs_tol = 1e-10);

/// Closed-form DRE solution Sigma_inf + e^{F t} D_t^{-1} e^{F^T t},
/// D_t = (Sigma0 - Sigma_inf)^{-1} + int_0^t e^{F^T s} H^T H e^{F s} ds.
/// Returns Sigma_inf when sigma0 == Sigma_inf; throws NumericalError when
/// sigma0 - Sigma_inf is singular but nonzero.
CovMatrix explicit_dre_solution(const CovMatrix& sigma0, const StabilityConstants& consts,
                                const ModelParams& params, double t);

/// Phi_{t,s} for the covariance path sigma_path (RK4 on the path's grid).
Mat transition_phi(double s, double t, const MatrixPath& sigma_path, const ModelParams& params);

/// Psi^{(Q)}_{t,s} for the path q_path.
Mat transition_psi(double s, double t, const MatrixPath& q_path, const ModelParams& params);

/// Psi_{t,s} for every t in `times` (ascending, each >= s) from one pass.
std::vector<Mat> psi_flow(double s, const std::vector<double>& times, const MatrixPath& q_path,
                          const ModelParams& params);
std::vector<Mat> phi_flow(double s, const std::vector<double>& times, const MatrixPath& sigma_path,
                          const ModelParams& params);

/// kappa = sup |Phi_{t,s}|_2 e^{lambda (t-s)} over an n x n grid of
/// t >= s >= t_start inside the path.
struct PhiEnvelope {
  double t_start = 0.0;
  double lambda = 0.0;
  double kappa = 0.0;
};
PhiEnvelope fit_phi_envelope(const MatrixPath& sigma_path, const ModelParams& params, double lambda,
                             double t_start, int n_grid = 20);

}  // namespace fpf
