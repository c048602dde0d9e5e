#include <stdexcept>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fpf/metrics.hpp"

using namespace fpf;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }
Mat m1(double x) { return Mat::Constant(1, 1, x); }

std::vector<TrialRecord> synthetic(const std::vector<std::int64_t>& ns, int trials, double (*f)(double, int),
                                   const char* q = "mean_err") {
  std::vector<TrialRecord> r;
  for (auto n : ns)
    for (int k = 0; k < trials; ++k)
      r.push_back({static_cast<std::uint64_t>(k), n, 1.0, q, f(static_cast<double>(n), k), 0});
  return r;
}

}  // namespace

TEST_CASE("double_factorial") {
  CHECK(double_factorial(0) == 1);
  CHECK(double_factorial(1) == 1);
  CHECK(double_factorial(5) == 15);
  CHECK(double_factorial(6) == 48);
  CHECK(double_factorial(33) == 6332659870762850625ull);
  CHECK_THROWS_AS(double_factorial(40), std::overflow_error);
}

TEST_CASE("theoretical_bounds") {
  const auto p = ModelParams::scalar(-1, 1, 1, 0, 1);
  StabilityConstants c = solve_are(p);
  SUBCASE("alpha = 1, Sigma0 = 1, p = 1 gives C1 = 2") {
    c.alpha = 1.0;
    CHECK(theoretical_bounds(p, c, 1).C1 == doctest::Approx(2.0));
  }
  SUBCASE("zero prior variance kills C1") {
    const auto q = ModelParams::scalar(-1, 1, 1, 0, 0);
    for (int k = 1; k <= 4; ++k) CHECK(theoretical_bounds(q, c, k).C1 == 0.0);
  }
  SUBCASE("acceptance model values") {
    const auto b = theoretical_bounds(p, c, 1);
    const double a4 = std::pow(c.alpha, 4), si = std::sqrt(2.0) - 1;
    CHECK(b.C1 == doctest::Approx(2 * a4));
    CHECK(b.C2 == doctest::Approx(4 * a4 * si * (1 + si)));
    CHECK(b.C3 == doctest::Approx((b.C1 + b.C2 + 1) / 2));
    CHECK(b.C4 == doctest::Approx(2 * b.C3 + 4 + std::sqrt(3.0) * (1 + si) * (b.C1 + b.C2) + 2));
    CHECK(b.cov_bound(100, 0) == doctest::Approx((b.C1 + b.C2) / 100));
    CHECK(theoretical_bounds(p, c, 2).C1 == doctest::Approx(2 * a4 * std::sqrt(3.0)));
  }
  SUBCASE("monotone in Sigma0") {
    double prev1 = -1, prev3 = -1, prev4 = -1;
    for (double s0 : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      const auto b = theoretical_bounds(ModelParams::scalar(-1, 1, 1, 0, s0), c, 1);
      CHECK(b.C1 > prev1);
      CHECK(b.C3 > prev3);
      CHECK(b.C4 > prev4);
      prev1 = b.C1;
      prev3 = b.C3;
      prev4 = b.C4;
    }
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(theoretical_bounds(ModelParams::scalar(0.5, 1, 1, 0, 1), c, 1), std::domain_error);
    const auto d2 = ModelParams::make(-Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Identity(2, 2), Vec::Zero(2),
                                      Mat::Identity(2, 2));
    CHECK_THROWS_AS(theoretical_bounds(d2, c, 1), std::invalid_argument);
  }
}

TEST_CASE("gaussian_w2") {
  CHECK(gaussian_w2(v1(0.3), m1(2), v1(0.3), m1(2)) == 0.0);
  CHECK(gaussian_w2(v1(1), m1(1), v1(0), m1(1)) == doctest::Approx(1.0));
  CHECK(gaussian_w2(v1(0), m1(4), v1(0), m1(1)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(gaussian_w2(v1(0), m1(-1), v1(0), m1(1)), std::invalid_argument);

  SUBCASE("matrix form: commuting covariances and symmetry") {
    Mat a = Mat::Zero(2, 2), b = Mat::Zero(2, 2);
    a.diagonal() << 4, 9;
    b.diagonal() << 1, 1;
    const Vec m = Vec::Zero(2);
    CHECK(gaussian_w2(m, a, m, b) == doctest::Approx(std::sqrt(1.0 + 4.0)));
    Mat c(2, 2);
    c << 2, 0.5, 0.5, 1;
    const Vec mc = (Vec(2) << 1, -1).finished();
    CHECK(gaussian_w2(m, a, mc, c) == doctest::Approx(gaussian_w2(mc, c, m, a)).epsilon(1e-10));
    CHECK_THROWS_AS(gaussian_w2(m, (Mat(2, 2) << 1, 2, 2, 1).finished(), m, b), std::invalid_argument);
  }
  SUBCASE("triangle inequality on random scalar triples") {
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> u(-3, 3), s(0, 4);
    for (int k = 0; k < 1000; ++k) {
      const Vec a = v1(u(g)), b = v1(u(g)), c = v1(u(g));
      const Mat A = m1(s(g)), B = m1(s(g)), C = m1(s(g));
      CHECK(gaussian_w2(a, A, c, C) <= gaussian_w2(a, A, b, B) + gaussian_w2(b, B, c, C) + 1e-12);
    }
  }
}

TEST_CASE("folded normal mean") {
  CHECK(folded_normal_mean(0.0, 1.0) == doctest::Approx(std::sqrt(2 / M_PI)));
  CHECK(folded_normal_mean(-2.5, 0.0) == 2.5);
  CHECK(folded_normal_mean(10.0, 1.0) == doctest::Approx(10.0));
}

TEST_CASE("mse_curve") {
  const std::vector<std::int64_t> ns = {100, 200, 400};
  SUBCASE("all-zero records give a zero curve") {
    const auto r = synthetic(ns, 30, [](double, int) { return 0.0; });
    for (const auto& pt : mse_curve(r, "mean_err", 1.0, 1, 7)) {
      CHECK(pt.estimate == 0.0);
      CHECK(pt.low == 0.0);
      CHECK(pt.high == 0.0);
    }
  }
  SUBCASE("pass-through of c / N, with bootstrap intervals around it") {
    const auto r = synthetic(ns, 40, [](double n, int) { return 3.0 / n; });
    const auto curve = mse_curve(r, "mean_err", 1.0, 1, 7);
    REQUIRE(curve.size() == 3);
    for (const auto& pt : curve) {
      CHECK(pt.estimate == doctest::Approx(3.0 / pt.N).epsilon(1e-14));
      CHECK(pt.low <= 3.0 / pt.N * (1 + 1e-14));
      CHECK(pt.high >= 3.0 / pt.N * (1 - 1e-14));
      CHECK(pt.n_trials == 40);
    }
  }
  SUBCASE("noisy records: interval brackets the analytic mean") {
    const auto r = synthetic(ns, 400, [](double n, int k) { return (1.0 + 0.5 * std::sin(12.9898 * k)) / n; });
    for (const auto& pt : mse_curve(r, "mean_err", 1.0, 1, 7)) {
      CHECK(pt.low < 1.0 / pt.N * 1.05);
      CHECK(pt.high > 1.0 / pt.N * 0.95);
      CHECK(pt.low < pt.estimate);
      CHECK(pt.estimate < pt.high);
    }
  }
  SUBCASE("cov_err_2p is raised to 1/p") {
    const auto r = synthetic(ns, 30, [](double n, int) { return 1.0 / (n * n); }, "cov_err_2p");
    for (const auto& pt : mse_curve(r, "cov_err_2p", 1.0, 2, 7)) CHECK(pt.estimate == doctest::Approx(1.0 / pt.N));
  }
  SUBCASE("record order does not change the estimate") {
    auto r = synthetic(ns, 50, [](double n, int k) { return (1.0 + 0.1 * k) / n; });
    const auto a = mse_curve(r, "mean_err", 1.0, 1, 7);
    std::reverse(r.begin(), r.end());
    const auto b = mse_curve(r, "mean_err", 1.0, 1, 7);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].estimate == b[i].estimate);
      CHECK(a[i].low == b[i].low);
    }
  }
  SUBCASE("insufficient trials") {
    const auto r = synthetic(ns, 29, [](double n, int) { return 1.0 / n; });
    CHECK_THROWS_AS(mse_curve(r, "mean_err", 1.0, 1, 7), std::invalid_argument);
    CHECK_THROWS_AS(mse_curve(r, "other", 1.0, 1, 7), std::invalid_argument);
  }
}

TEST_CASE("rate_fit") {
  using P = std::pair<double, double>;
  const std::vector<P> inv = {{100, 0.01}, {200, 0.005}, {400, 0.0025}};
  const auto f = rate_fit(inv);
  CHECK(f.slope == doctest::Approx(-1.0));
  CHECK(f.r_squared == doctest::Approx(1.0));
  CHECK(rate_fit(std::vector<P>{{100, 2}, {200, 2}, {400, 2}}).slope == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(rate_fit(std::vector<P>{{100, 0.1}, {200, 0.1 / std::sqrt(2.0)}, {400, 0.05}}).slope == doctest::Approx(-0.5));
  CHECK_THROWS_AS(rate_fit(std::vector<P>{{100, 0.1}, {200, 0.0}, {400, 0.05}}), std::invalid_argument);
  CHECK_THROWS_AS(rate_fit(std::vector<P>{{100, 0.1}, {200, 0.1}}), std::invalid_argument);
  const auto noisy = rate_fit(std::vector<P>{{100, 0.011}, {200, 0.0048}, {400, 0.0026}, {800, 0.0012}});
  CHECK(noisy.r_squared >= 0.0);
  CHECK(noisy.r_squared <= 1.0);
}

TEST_CASE("pairwise_sum") {
  std::vector<double> v(1000, 0.1);
  CHECK(pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(pairwise_sum({}) == 0.0);
}
