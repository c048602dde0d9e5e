#include "fpf/kalman.hpp"

#include <ostream>

#include "fpf/csv.hpp"

namespace fpf {

FilterState prior_state(const ModelParams& p, double t0) { return {t0, p.m0, p.Sigma0}; }

FilterState kb_step(const FilterState& s, const Vec& dZ, double dt, const ModelParams& p) {
  const Mat gain = s.cov * p.H.transpose();
  FilterState next;
  next.t = s.t + dt;
  next.mean = s.mean + dt * (p.A * s.mean) + gain * (dZ - dt * (p.H * s.mean));
  next.cov = dre_rk4_step(s.cov, p, dt);
  return next;
}

std::vector<FilterState> kb_filter(const ModelParams& p, const TimeGrid& grid,
                                   const ObservationIncrements& obs, const FilterState& init) {
  if (init.mean.size() != p.d || init.cov.rows() != p.d || init.cov.cols() != p.d)
    throw std::invalid_argument("kb_filter: initial state has wrong dimensions");
  if (obs.dZ.cols() != grid.n_steps || obs.dZ.rows() != p.m)
    throw std::invalid_argument("kb_filter: observation record does not match the grid");
  std::vector<FilterState> out;
  out.reserve(static_cast<std::size_t>(grid.n_steps + 1));
  out.push_back({grid.t0, init.mean, symmetrized(init.cov)});
  for (std::int64_t k = 0; k < grid.n_steps; ++k) {
    out.push_back(kb_step(out.back(), obs.dZ.col(k), grid.dt, p));
    out.back().t = grid.time(k + 1);
  }
  return out;
}

void write_filter_csv(std::ostream& os, const std::vector<FilterState>& path) {
  if (path.empty()) return;
  const Eigen::Index d = path.front().mean.size();
  os << "time";
  for (Eigen::Index i = 0; i < d; ++i) os << ",mean_" << i;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i; j < d; ++j) os << ",cov_" << i << '_' << j;
  os << '\n';
  for (const auto& s : path) {
    os << format_double(s.t);
    for (Eigen::Index i = 0; i < d; ++i) os << ',' << format_double(s.mean(i));
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i; j < d; ++j) os << ',' << format_double(s.cov(i, j));
    os << '\n';
  }
}

}  // namespace fpf
