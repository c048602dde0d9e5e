#pragma once

// Error functionals, explicit convergence constants, Gaussian W2 and
// log-log rate fitting.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpf/linalg.hpp"
#include "fpf/linmodel.hpp"
#include "fpf/riccati.hpp"

namespace fpf {

/// n!! = n (n-2) (n-4) ...; 0!! = 1!! = 1. Throws std::overflow_error past 64 bits.
std::uint64_t double_factorial(unsigned n);

/// Scalar-model constants of the finite-N convergence bounds:
///   E|S_N - S|^{2p}^{1/p} <= (C1 e^{-2 beta t} + C2) / N
///   E|m_N - m|^2         <= Sigma0 e^{-2 mu t} / N + C3 / N
///   E|X^i - Xbar^i|^2    <= C4 / N
struct TheoreticalBounds {
  int p = 1;
  double C1 = 0.0;
  double C2 = 0.0;
  double C3 = 0.0;
  double C4 = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
  double mu_A = 0.0;
  double Sigma0 = 0.0;

  double cov_bound(double N, double t) const;
  double mean_bound(double N, double t) const;
  double coupling_bound(double N) const;
};

TheoreticalBounds theoretical_bounds(const ModelParams& params, const StabilityConstants& consts, int p);

/// L2-Wasserstein distance between N(m1, S1) and N(m2, S2).
double gaussian_w2(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2);

/// E|Y| for Y ~ N(mu, var).
double folded_normal_mean(double mu, double var);

/// One Monte Carlo observation.
struct TrialRecord {
  std::uint64_t trial = 0;
  std::int64_t N = 0;
  double t = 0.0;
  std::string quantity;
  double value = 0.0;
  int level = 0;  // grid refinement the trial ran at
};

struct CurvePoint {
  std::int64_t N = 0;
  double estimate = 0.0;
  double low = 0.0;   // bootstrap 2.5% quantile
  double high = 0.0;  // bootstrap 97.5% quantile
  std::size_t n_trials = 0;
};

inline constexpr std::size_t kMinTrialsPerPoint = 30;

/// Per-N Monte Carlo estimate of E[value] (raised to 1/p for cov_err_2p) at
/// time t and refinement level, with percentile-bootstrap intervals from
/// `n_boot` trial-level resamples. Records are summed in trial-id order with
/// pairwise summation, so the estimate does not depend on record order.
std::vector<CurvePoint> mse_curve(std::span<const TrialRecord> records, const std::string& quantity,
                                  double t, int p, std::uint64_t bootstrap_seed, int n_boot = 1000,
                                  int level = 0);

struct RateFit {
  std::vector<std::pair<double, double>> points;  // (N, error)
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (log N, log error).
RateFit rate_fit(std::span<const std::pair<double, double>> curve);
RateFit rate_fit(std::span<const CurvePoint> curve);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};
LineFit least_squares_line(std::span<const double> x, std::span<const double> y);

/// Pairwise (cascade) summation.
double pairwise_sum(std::span<const double> v);

}  // namespace fpf
