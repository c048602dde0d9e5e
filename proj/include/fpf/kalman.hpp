#pragma once

// Kalman-Bucy filter driven by a recorded observation-increment sequence.

#include <iosfwd>
#include <vector>

#include "fpf/linmodel.hpp"
#include "fpf/riccati.hpp"

namespace fpf {

struct FilterState {
  double t = 0.0;
  Vec mean;
  CovMatrix cov;
};

/// (m0, Sigma0) at t0.
FilterState prior_state(const ModelParams& params, double t0 = 0.0);

/// Explicit Euler on the mean with gain Sigma_k H^T, one RK4 step of the DRE
/// on the covariance.
FilterState kb_step(const FilterState& state, const Vec& dZ, double dt, const ModelParams& params);

/// States at every grid node (n_steps + 1 entries).
std::vector<FilterState> kb_filter(const ModelParams& params, const TimeGrid& grid,
                                   const ObservationIncrements& obs, const FilterState& init);

/// CSV: time, mean_0..mean_{d-1}, cov_ij for i <= j (row-major upper triangle).
void write_filter_csv(std::ostream& os, const std::vector<FilterState>& path);

}  // namespace fpf
