#include "fpf/ensemble.hpp"

#include <cmath>
#include <ostream>

#include "fpf/csv.hpp"
#include "fpf/kernels.hpp"

namespace fpf {

void VariantParams::validate() const {
  if (!(gamma1 >= 0.0 && gamma1 <= 1.0 && gamma2 >= 0.0 && gamma2 <= 1.0))
    throw std::invalid_argument("VariantParams: gamma1 and gamma2 must lie in [0, 1]");
}

namespace {

std::span<double> lanes(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

bool scalar_model(const ModelParams& p) { return p.d == 1 && p.m == 1 && p.d_B == 1; }

}  // namespace

Mat InitialLaw::sample(const NoiseBundle& noise, std::uint64_t first, std::int64_t count) const {
  const Eigen::Index d = mean.size();
  if (cov.rows() != d || cov.cols() != d) throw std::invalid_argument("InitialLaw: cov must be d x d");
  const Mat root = sqrtm_psd(cov);
  Mat out(d, count);
  if (kind == Kind::gaussian) {
    Mat z(d, count);
    initial_normals(noise, first * static_cast<std::uint64_t>(d), lanes(z));
    out = root * z;
  } else {
    // A unit exponential is half a chi-square with two degrees of freedom.
    Mat z(2 * d, count);
    initial_normals(noise, first * static_cast<std::uint64_t>(2 * d), lanes(z));
    Mat e(d, count);
    for (Eigen::Index i = 0; i < count; ++i)
      for (Eigen::Index c = 0; c < d; ++c) {
        const double a = z(2 * c, i);
        const double b = z(2 * c + 1, i);
        e(c, i) = 0.5 * (a * a + b * b) - 1.0;
      }
    out = root * e;
  }
  out.colwise() += mean;
  return out;
}

Ensemble init_ensemble(const InitialLaw& law, Eigen::Index N, VariantParams variant,
                       const NoiseBundle& noise) {
  if (N < 2) throw std::invalid_argument("init_ensemble: N must be at least 2");
  variant.validate();
  Ensemble ens;
  ens.states = law.sample(noise, 0, N);
  ens.variant = variant;
  return ens;
}

Ensemble init_ensemble(const ModelParams& params, Eigen::Index N, VariantParams variant,
                       const NoiseBundle& noise) {
  return init_ensemble(InitialLaw::prior(params), N, variant, noise);
}

EnsembleStats empirical_stats(const Ensemble& ens) {
  const Eigen::Index n = ens.size();
  const Eigen::Index d = ens.dim();
  if (n < 2) throw std::invalid_argument("empirical_stats: N must be at least 2");
  EnsembleStats st;
  if (d == 1) {
    const auto& k = kernels::active();
    const double* x = ens.states.data();
    const double mean = k.sum(x, static_cast<std::size_t>(n)) / static_cast<double>(n);
    const double m2 = k.sum_sq_dev(x, static_cast<std::size_t>(n), mean);
    st.mean = Vec::Constant(1, mean);
    st.cov = Mat::Constant(1, 1, m2 / static_cast<double>(n - 1));
    st.errors = ens.states.array() - mean;
    return st;
  }
  st.mean = ens.states.rowwise().mean();
  st.errors = ens.states.colwise() - st.mean;
  st.cov = symmetrized(st.errors * st.errors.transpose() / static_cast<double>(n - 1));
  return st;
}

NoiseBundle perturbed_obs_stream(const NoiseBundle& noise) {
  return {noise.seed, mix_seed(noise.stream_id, static_cast<std::uint64_t>(StreamRole::perturbed_obs)),
          noise.silenced};
}

StepNoise draw_step_noise(const NoiseBundle& noise, std::uint64_t step, int refinement,
                          Eigen::Index N, const ModelParams& p, VariantParams variant) {
  StepNoise out;
  out.dB.resize(p.d_B, N);
  if (variant.gamma1 != 0.0) {
    standard_increments(noise, step, 0, lanes(out.dB), refinement);
  } else {
    out.dB.setZero();
  }
  if (variant.gamma2 != 0.0) {
    out.dW.resize(p.m, N);
    standard_increments(perturbed_obs_stream(noise), step, 0, lanes(out.dW), refinement);
  }
  return out;
}

void advance_states(Mat& states, const Vec& mean, const CovMatrix& cov, const Vec& dZ, double dt,
                    const ModelParams& p, VariantParams v, const StepNoise& noise) {
  const double drift_coef = 0.5 * (1.0 - v.gamma1 * v.gamma1);
  const double self_weight = 0.5 * (1.0 + v.gamma2 * v.gamma2);
  const double mean_weight = 0.5 * (1.0 - v.gamma2 * v.gamma2);
  const double sq = std::sqrt(dt);
  const Eigen::Index n = states.cols();

  Mat cov_inv;
  if (v.needs_inverse()) {
    const double tr = cov.trace();
    if (!(min_eigenvalue(cov) > 1e-10 * tr))
      throw NumericalError("ensemble collapse: covariance is singular and the variant needs its inverse");
    cov_inv = cov.inverse();
  }
  const Mat gain = cov * p.H.transpose();

  if (scalar_model(p)) {
    const double a = p.a();
    const double h = p.h();
    const double k = gain(0, 0);
    const double m = mean(0);
    const double inv = v.needs_inverse() ? cov_inv(0, 0) : 0.0;
    kernels::Affine c;
    c.a = 1.0 + a * dt + drift_coef * inv * dt - k * h * self_weight * dt;
    c.b1 = v.gamma1 * p.sigma_B(0, 0) * sq;
    c.b2 = k * v.gamma2 * sq;
    c.c = k * dZ(0) - k * h * mean_weight * m * dt - drift_coef * inv * m * dt;
    kernels::active().affine_update(states.data(), noise.dB.data(),
                                    v.gamma2 != 0.0 ? noise.dW.data() : nullptr,
                                    static_cast<std::size_t>(n), c);
    return;
  }

  const Mat centered = states.colwise() - mean;
  Mat innov = (-dt * mean_weight) * (p.H * mean).replicate(1, n) - (dt * self_weight) * (p.H * states);
  innov.colwise() += dZ;
  if (v.gamma2 != 0.0) innov += (v.gamma2 * sq) * noise.dW;
  Mat next = states + dt * (p.A * states) + gain * innov;
  if (v.gamma1 != 0.0) next += (v.gamma1 * sq) * (p.sigma_B * noise.dB);
  if (v.needs_inverse()) next += (drift_coef * dt) * (cov_inv * centered);
  states = std::move(next);
}

Ensemble fpf_step(const Ensemble& ens, const EnsembleStats& stats, const Vec& dZ, double dt,
                  const ModelParams& params, const NoiseBundle& noise, int refinement) {
  Ensemble next = ens;
  const StepNoise sn = draw_step_noise(noise, ens.step, refinement, ens.size(), params, ens.variant);
  advance_states(next.states, stats.mean, stats.cov, dZ, dt, params, ens.variant, sn);
  next.t = ens.t + dt;
  next.step = ens.step + 1;
  return next;
}

CoupledSystem init_coupled(const InitialLaw& law, Eigen::Index N, VariantParams variant,
                           const NoiseBundle& noise) {
  CoupledSystem sys;
  sys.ensemble = init_ensemble(law, N, variant, noise);
  sys.copies = sys.ensemble.states;
  return sys;
}

CoupledSystem coupled_step(const CoupledSystem& sys, const FilterState& kf, const Vec& dZ, double dt,
                           const ModelParams& params, const NoiseBundle& noise,
                           const CoupledOptions& opts) {
  if (sys.copies_step != sys.ensemble.step || sys.copies.cols() != sys.ensemble.size())
    throw std::logic_error("coupled_step: particles and copies consumed different increments");
  CoupledSystem next = sys;
  const VariantParams v = sys.ensemble.variant;
  const StepNoise sn =
      draw_step_noise(noise, sys.ensemble.step, opts.refinement, sys.ensemble.size(), params, v);
  const EnsembleStats st = empirical_stats(sys.ensemble);
  advance_states(next.ensemble.states, st.mean, opts.force_exact_gain ? kf.cov : st.cov, dZ, dt, params,
                 v, sn);
  advance_states(next.copies, kf.mean, kf.cov, dZ, dt, params, v, sn);
  next.ensemble.t = sys.ensemble.t + dt;
  next.ensemble.step = sys.ensemble.step + 1;
  next.copies_step = sys.copies_step + 1;
  return next;
}

std::pair<Mat, Mat> error_processes(const CoupledSystem& sys, const FilterState& kf) {
  const EnsembleStats st = empirical_stats(sys.ensemble);
  return {st.errors, sys.copies.colwise() - kf.mean};
}

void write_ensemble_csv(std::ostream& os, const Ensemble& ens, bool header) {
  if (header) {
    os << "time,particle";
    for (Eigen::Index c = 0; c < ens.dim(); ++c) os << ",x_" << c;
    os << '\n';
  }
  for (Eigen::Index i = 0; i < ens.size(); ++i) {
    os << format_double(ens.t) << ',' << i;
    for (Eigen::Index c = 0; c < ens.dim(); ++c) os << ',' << format_double(ens.states(c, i));
    os << '\n';
  }
}

}  // namespace fpf
