#include <stdexcept>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fpf/ensemble.hpp"

using namespace fpf;

namespace {

ModelParams acceptance_model() { return ModelParams::scalar(-1, 1, 1, 0, 1); }

Mat row(std::initializer_list<double> v) {
  Mat m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("init_ensemble") {
  const auto p = acceptance_model();
  SUBCASE("degenerate prior puts every particle at m0") {
    const auto q = ModelParams::scalar(-1, 1, 1, 0.7, 0);
    const auto e = init_ensemble(q, 16, {}, {1, 3, false});
    CHECK((e.states.array() == 0.7).all());
  }
  SUBCASE("prior moments") {
    const std::int64_t n = 100000;
    const auto st = empirical_stats(init_ensemble(p, n, {}, {2, 3, false}));
    CHECK(std::abs(st.mean(0)) < 3.0 / std::sqrt(n));
    CHECK(std::abs(st.cov(0, 0) - 1.0) < 3.0 * std::sqrt(2.0 / n));
  }
  SUBCASE("fixed seed is deterministic") {
    CHECK(init_ensemble(p, 50, {}, {3, 3, false}).states == init_ensemble(p, 50, {}, {3, 3, false}).states);
  }
  SUBCASE("N < 2 is rejected") { CHECK_THROWS_AS(init_ensemble(p, 1, {}, {1, 3, false}), std::invalid_argument); }
  SUBCASE("variant parameters are range checked") {
    CHECK_THROWS_AS(init_ensemble(p, 4, {1.5, 0.0}, {1, 3, false}), std::invalid_argument);
  }
  SUBCASE("exponential law matches the first two moments and is skewed") {
    const InitialLaw law{InitialLaw::Kind::exponential, Vec::Constant(1, 2.0), Mat::Constant(1, 1, 4.0)};
    const std::int64_t n = 200000;
    const Mat x = law.sample({4, 3, false}, 0, n);
    const double m = x.mean();
    const double v = (x.array() - m).square().sum() / (n - 1);
    const double s = (x.array() - m).cube().mean() / std::pow(v, 1.5);
    CHECK(std::abs(m - 2.0) < 4.0 * 2.0 / std::sqrt(n));
    CHECK(std::abs(v / 4.0 - 1.0) < 0.03);
    CHECK(s == doctest::Approx(2.0).epsilon(0.1));  // unit exponential skewness
  }
}

TEST_CASE("empirical_stats") {
  SUBCASE("three states 0, 1, 2") {
    const auto st = empirical_stats(Ensemble{0, 0, row({0, 1, 2}), {}});
    CHECK(st.mean(0) == 1.0);
    CHECK(st.cov(0, 0) == 1.0);
    CHECK(st.errors == row({-1, 0, 1}));
  }
  SUBCASE("equal particles") {
    const auto st = empirical_stats(Ensemble{0, 0, row({3, 3, 3, 3}), {}});
    CHECK(st.cov(0, 0) == 0.0);
    CHECK(st.errors.isZero(0));
  }
  SUBCASE("vector ensembles: errors sum to zero and cov is PSD") {
    Mat x(3, 7);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 7; ++j) x(i, j) = std::sin(1.3 * i + 0.7 * j * j);
    const auto st = empirical_stats(Ensemble{0, 0, x, {}});
    CHECK(st.errors.rowwise().sum().norm() < 1e-14);
    CHECK(min_eigenvalue(st.cov) > -1e-10);
    CHECK((st.cov - st.errors * st.errors.transpose() / 6.0).norm() < 1e-14);
  }
  SUBCASE("unbiased covariance estimator") {
    const auto p = acceptance_model();
    const int reps = 10000;
    double acc = 0;
    for (int r = 0; r < reps; ++r)
      acc += empirical_stats(init_ensemble(p, 5, {}, {static_cast<std::uint64_t>(r), 3, false})).cov(0, 0);
    // Var of the N = 5 sample variance is 2 / 4.
    CHECK(std::abs(acc / reps - 1.0) < 4.0 * std::sqrt(0.5 / reps));
  }
  SUBCASE("N < 2 is rejected") { CHECK_THROWS(empirical_stats(Ensemble{0, 0, row({1}), {}})); }
}

TEST_CASE("fpf_step without observation or noise is the plain drift") {
  const auto p = ModelParams::scalar(-0.8, 0, 0, 0, 1);
  auto e = init_ensemble(p, 8, {}, {1, 3, false});
  const Mat x0 = e.states;
  const auto next = fpf_step(e, empirical_stats(e), Vec::Constant(1, 0.37), 0.01, p, {1, 3, false});
  CHECK((next.states - (x0 + 0.01 * (-0.8) * x0)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(next.step == 1);
  CHECK(next.t == doctest::Approx(0.01));
}

TEST_CASE("one step of N = 2 against a hand evaluation") {
  const double a = -1.0, h = 1.0, sb = 1.0, dt = 0.01, dz = 0.02;
  const auto p = ModelParams::scalar(a, h, sb, 0, 1);
  const NoiseBundle nb{77, 3, false};
  Ensemble e{0, 0, row({0.5, -1.0}), VariantParams::stochastic_fpf()};
  const auto st = empirical_stats(e);
  const auto next = fpf_step(e, st, Vec::Constant(1, dz), dt, p, nb);

  std::vector<double> z(2);
  standard_increments(nb, 0, 0, z);
  const double m = (0.5 - 1.0) / 2;
  const double S = ((0.5 - m) * (0.5 - m) + (-1.0 - m) * (-1.0 - m)) / 1.0;
  const double K = S * h;
  for (int i = 0; i < 2; ++i) {
    const double x = e.states(0, i);
    const double ref = x + a * x * dt + sb * std::sqrt(dt) * z[static_cast<std::size_t>(i)] + K * (dz - 0.5 * h * (x + m) * dt);
    CHECK(next.states(0, i) == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("variant dynamics: scalar kernel path equals the general matrix path") {
  const auto p1 = ModelParams::scalar(-1.3, 0.8, 0.6, 0, 1);
  Mat A = Mat::Zero(2, 2), H = Mat::Zero(2, 2), sb = Mat::Zero(2, 2);
  A(0, 0) = -1.3;
  A(1, 1) = -0.4;
  H(0, 0) = 0.8;
  H(1, 1) = 1.0;
  sb(0, 0) = 0.6;
  sb(1, 1) = 1.0;
  const auto p2 = ModelParams::make(A, H, sb, Vec::Zero(2), Mat::Identity(2, 2));
  const int n = 9;
  Mat x1(1, n), x2(2, n), b1(1, n), b2(2, n), w1(1, n), w2(2, n);
  for (int i = 0; i < n; ++i) {
    x1(0, i) = x2(0, i) = std::cos(1.7 * i);
    x2(1, i) = std::sin(i);
    b1(0, i) = b2(0, i) = std::sin(2.1 * i + 0.3);
    b2(1, i) = 0.1;
    w1(0, i) = w2(0, i) = std::cos(0.9 * i + 1.0);
    w2(1, i) = -0.2;
  }
  const Vec mean1 = Vec::Constant(1, 0.15), mean2 = (Vec(2) << 0.15, 0.0).finished();
  const Mat cov1 = Mat::Constant(1, 1, 0.42);
  Mat cov2 = Mat::Identity(2, 2);
  cov2(0, 0) = 0.42;
  const Vec dz1 = Vec::Constant(1, 0.031), dz2 = (Vec(2) << 0.031, 0.0).finished();
  for (VariantParams v : {VariantParams::stochastic_fpf(), VariantParams::perturbed_enkbf(),
                          VariantParams::deterministic_fpf(), VariantParams{0.5, 0.3}}) {
    Mat y1 = x1, y2 = x2;
    advance_states(y1, mean1, cov1, dz1, 0.01, p1, v, {b1, w1});
    advance_states(y2, mean2, cov2, dz2, 0.01, p2, v, {b2, w2});
    CHECK((y1.row(0) - y2.row(0)).cwiseAbs().maxCoeff() < 1e-14);

    // Direct formula.
    const double dt = 0.01, sq = std::sqrt(dt), S = 0.42, m = 0.15, a = -1.3, h = 0.8, s = 0.6;
    for (int i = 0; i < n; ++i) {
      const double x = x1(0, i);
      const double ref = x + a * x * dt + v.gamma1 * s * sq * b1(0, i) + 0.5 * (1 - v.gamma1 * v.gamma1) / S * (x - m) * dt +
                         S * h * (0.031 - h * ((1 - v.gamma2 * v.gamma2) * m + (1 + v.gamma2 * v.gamma2) * x) / 2 * dt +
                                  v.gamma2 * sq * w1(0, i));
      CHECK(y1(0, i) == doctest::Approx(ref).epsilon(1e-13));
    }
  }
}

TEST_CASE("variants needing the inverse refuse a collapsed ensemble") {
  const auto p = acceptance_model();
  Ensemble e{0, 0, row({1, 1, 1}), VariantParams::deterministic_fpf()};
  CHECK_THROWS_AS(fpf_step(e, empirical_stats(e), Vec::Zero(1), 0.01, p, {1, 3, false}), NumericalError);
  e.variant = VariantParams::stochastic_fpf();
  CHECK_NOTHROW(fpf_step(e, empirical_stats(e), Vec::Zero(1), 0.01, p, {1, 3, false}));
}

TEST_CASE("finite-N moment equations hold for one explicit step") {
  const auto p = acceptance_model();
  const NoiseBundle nb{12, 3, false};
  const double dt = 0.001, dz = 0.004;
  auto e = init_ensemble(p, 64, {}, nb);
  const auto st = empirical_stats(e);
  const auto next = fpf_step(e, st, Vec::Constant(1, dz), dt, p, nb);
  const auto st2 = empirical_stats(next);

  std::vector<double> z(64);
  standard_increments(nb, 0, 0, z);
  const double dbar = std::sqrt(dt) * std::accumulate(z.begin(), z.end(), 0.0) / 64.0;
  const double S = st.cov(0, 0), m = st.mean(0);
  // mean: dm = A m dt + sigma_B dB^(N) + S H (dZ - H m dt)
  CHECK(st2.mean(0) == doctest::Approx(m - m * dt + dbar + S * (dz - m * dt)).epsilon(1e-12));
  // errors: dxi = sqrtRicc(S) xi dt + sigma_B (dB^i - dB^(N))
  for (int i = 0; i < 64; ++i) {
    const double xi = st.errors(0, i);
    const double ref = xi + (-1.0 - 0.5 * S) * xi * dt + std::sqrt(dt) * z[static_cast<std::size_t>(i)] - dbar;
    CHECK(st2.errors(0, i) == doctest::Approx(ref).epsilon(1e-11).scale(1.0));
  }
  // covariance: Ricc drift plus the martingale increment, to O(dt^2)
  double dM = 0;
  for (int i = 0; i < 64; ++i) dM += (std::sqrt(dt) * z[static_cast<std::size_t>(i)] - dbar) * st.errors(0, i);
  dM *= 2.0 / 63.0;
  const double ricc = -2 * S + 1 - S * S;
  const double dS = st2.cov(0, 0) - S;
  CHECK(std::abs(dS - (ricc * dt + dM)) < 40.0 * dt * dt + std::abs(dS) * 0.05);
}

TEST_CASE("exchange symmetry") {
  const auto p = acceptance_model();
  const int n = 6;
  Mat x(1, n), b(1, n);
  for (int i = 0; i < n; ++i) {
    x(0, i) = std::cos(2.0 * i);
    b(0, i) = std::sin(3.0 * i);
  }
  const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  Mat xp(1, n), bp(1, n);
  for (int i = 0; i < n; ++i) {
    xp(0, i) = x(0, perm[static_cast<std::size_t>(i)]);
    bp(0, i) = b(0, perm[static_cast<std::size_t>(i)]);
  }
  const auto s1 = empirical_stats(Ensemble{0, 0, x, {}});
  const auto s2 = empirical_stats(Ensemble{0, 0, xp, {}});
  advance_states(x, s1.mean, s1.cov, Vec::Constant(1, 0.01), 0.01, p, {}, {b, {}});
  advance_states(xp, s2.mean, s2.cov, Vec::Constant(1, 0.01), 0.01, p, {}, {bp, {}});
  for (int i = 0; i < n; ++i) CHECK(xp(0, i) == doctest::Approx(x(0, perm[static_cast<std::size_t>(i)])).epsilon(1e-14));
}

TEST_CASE("all variants are exact in law at the moment level") {
  const auto p = acceptance_model();
  const auto grid = TimeGrid::make(1.0, 1e-3);
  const auto truth = simulate_truth(p, grid, {30, 1, false});
  const auto obs = simulate_observations(p, grid, truth, {30, 2, false});
  const std::int64_t n = 10000;
  for (VariantParams v : {VariantParams::stochastic_fpf(), VariantParams::perturbed_enkbf(),
                          VariantParams::deterministic_fpf()}) {
    const NoiseBundle nb{31, 3, false};
    Ensemble e = init_ensemble(p, n, v, nb);
    FilterState kf = prior_state(p);
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
      e = fpf_step(e, empirical_stats(e), obs.dZ.col(k), grid.dt, p, nb);
      kf = kb_step(kf, obs.dZ.col(k), grid.dt, p);
    }
    const auto st = empirical_stats(e);
    const double S = kf.cov(0, 0);
    CHECK_MESSAGE(std::abs(st.mean(0) - kf.mean(0)) < 4.0 * std::sqrt(S / n), "gamma=" << v.gamma1 << "," << v.gamma2);
    CHECK_MESSAGE(std::abs(st.cov(0, 0) / S - 1.0) < 4.0 * std::sqrt(2.0 / n) + 0.01,
                  "gamma=" << v.gamma1 << "," << v.gamma2);
  }
}

TEST_CASE("coupled system") {
  const auto p = acceptance_model();
  const auto grid = TimeGrid::make(1.0, 1e-3);
  const auto obs = simulate_observations(p, grid, simulate_truth(p, grid, {40, 1, false}), {40, 2, false});

  SUBCASE("deterministic exact filter: copies follow the Kalman mean") {
    const auto q = ModelParams::scalar(-1, 1, 0, 0.5, 0);
    const NoiseBundle nb{41, 3, false};
    auto sys = init_coupled(InitialLaw::prior(q), 2, {}, nb);
    FilterState kf = prior_state(q);
    double worst = 0;
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
      sys = coupled_step(sys, kf, obs.dZ.col(k), grid.dt, q, nb);
      kf = kb_step(kf, obs.dZ.col(k), grid.dt, q);
      worst = std::max(worst, (sys.copies.array() - kf.mean(0)).abs().maxCoeff());
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("particle i and copy i share their start") {
    const NoiseBundle nb{42, 3, false};
    const auto sys = init_coupled(InitialLaw::prior(p), 32, {}, nb);
    CHECK(sys.copies == sys.ensemble.states);
  }
  SUBCASE("forced exact gain: only the mean discrepancy separates the systems") {
    const NoiseBundle nb{43, 3, false};
    auto sys = init_coupled(InitialLaw::prior(p), 10000, {}, nb);
    FilterState kf = prior_state(p);
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
      sys = coupled_step(sys, kf, obs.dZ.col(k), grid.dt, p, nb, {true, 0});
      kf = kb_step(kf, obs.dZ.col(k), grid.dt, p);
    }
    const Mat gap = sys.ensemble.states - sys.copies;
    CHECK(gap.cwiseAbs().maxCoeff() < 0.05);
    // With equal gains every particle moves by the same amount.
    CHECK(gap.maxCoeff() - gap.minCoeff() < 1e-10);
  }
  SUBCASE("desynchronised streams are refused") {
    const NoiseBundle nb{44, 3, false};
    auto sys = init_coupled(InitialLaw::prior(p), 4, {}, nb);
    sys.copies_step = 3;
    CHECK_THROWS_AS(coupled_step(sys, prior_state(p), obs.dZ.col(0), grid.dt, p, nb), std::logic_error);
  }
}

TEST_CASE("error processes") {
  SUBCASE("centering identity") {
    const auto p = acceptance_model();
    const NoiseBundle nb{50, 3, false};
    const auto sys = init_coupled(InitialLaw::prior(p), 100, {}, nb);
    const auto [xi, xi_bar] = error_processes(sys, prior_state(p));
    CHECK(std::abs(xi.sum()) < 1e-12);
    CHECK(xi_bar == sys.copies);  // m0 = 0
  }
  SUBCASE("noise-free copies at equilibrium follow the linear flow") {
    const double sinf = std::sqrt(2.0) - 1;
    const auto q = ModelParams::scalar(-1, 1, 0, 0, sinf);
    // sigma_B = 0 changes the ARE, so hold the covariance at sqrt(2) - 1 by hand.
    const auto grid = TimeGrid::make(1.0, 1e-3);
    const NoiseBundle nb{51, 3, false};
    auto sys = init_coupled(InitialLaw::prior(q), 8, {}, nb);
    FilterState kf{0.0, Vec::Zero(1), Mat::Constant(1, 1, sinf)};
    const Mat xi0 = sys.copies;
    const double rate = -1 - 0.5 * sinf;
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
      const Vec dz = Vec::Constant(1, 0.001 * std::sin(0.01 * k));
      sys = coupled_step(sys, kf, dz, grid.dt, q, nb);
      kf.mean = kf.mean + grid.dt * (q.A * kf.mean) + kf.cov * q.H.transpose() * (dz - grid.dt * q.H * kf.mean);
    }
    const Mat xi_bar = sys.copies.array() - kf.mean(0);
    for (int i = 0; i < 8; ++i) CHECK(xi_bar(0, i) == doctest::Approx(std::exp(rate) * xi0(0, i)).epsilon(2e-3));
  }
}

TEST_CASE("ensemble CSV") {
  std::ostringstream os;
  write_ensemble_csv(os, Ensemble{0.5, 0, row({1, 2}), {}});
  CHECK(os.str() == "time,particle,x_0\n0.5,0,1\n0.5,1,2\n");
}
