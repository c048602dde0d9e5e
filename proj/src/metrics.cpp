#include "fpf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "fpf/rng.hpp"

namespace fpf {

std::uint64_t double_factorial(unsigned n) {
  std::uint64_t r = 1;
  for (unsigned k = n; k >= 2; k -= 2) {
    if (r > std::numeric_limits<std::uint64_t>::max() / k)
      throw std::overflow_error("double_factorial: result exceeds 64 bits");
    r *= k;
  }
  return r;
}

double TheoreticalBounds::cov_bound(double N, double t) const {
  return (C1 * std::exp(-2.0 * beta * t) + C2) / N;
}

double TheoreticalBounds::mean_bound(double N, double t) const {
  return (Sigma0 * std::exp(-2.0 * mu_A * t) + C3) / N;
}

double TheoreticalBounds::coupling_bound(double N) const { return C4 / N; }

TheoreticalBounds theoretical_bounds(const ModelParams& params, const StabilityConstants& c, int p) {
  if (!params.is_scalar() || params.d_B != 1)
    throw std::invalid_argument("theoretical_bounds: the explicit constants exist for the scalar model only");
  if (p < 1) throw std::invalid_argument("theoretical_bounds: p must be positive");
  const AssumptionReport rep = validate_assumptions(params);
  if (!rep.a3 || !(rep.mu_A > 0.0))
    throw std::domain_error("theoretical_bounds: requires mu(A) > 0 (asymptotically stable signal)");

  TheoreticalBounds b;
  b.p = p;
  b.beta = c.beta;
  b.alpha = c.alpha;
  b.mu_A = rep.mu_A;
  b.Sigma0 = params.Sigma0(0, 0);
  const double s0 = b.Sigma0;
  const double sinf = c.Sigma_inf(0, 0);
  const double sb = params.Sigma_B(0, 0);
  const double h2 = params.h() * params.h();
  const double a4 = std::pow(c.alpha, 4);
  const double df = static_cast<double>(double_factorial(static_cast<unsigned>(2 * p - 1)));
  b.C1 = 2.0 * a4 * s0 * s0 * std::pow(df, 1.0 / p);
  b.C2 = 4.0 * (2.0 * p - 1.0) * a4 * sinf * (s0 + sinf);
  b.C3 = ((b.C1 + b.C2) * h2 + sb) / (2.0 * b.mu_A);
  b.C4 = 2.0 * b.C3 + 4.0 * s0 +
         std::sqrt(3.0) * h2 * h2 * (s0 + sinf) * (b.C1 + b.C2) / (b.mu_A * b.mu_A) + 2.0 * sb / b.mu_A;
  return b;
}

double gaussian_w2(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2) {
  if (m1.size() != m2.size() || S1.rows() != m1.size() || S2.rows() != m2.size() ||
      S1.cols() != S1.rows() || S2.cols() != S2.rows())
    throw std::invalid_argument("gaussian_w2: dimension mismatch");
  if (m1 == m2 && S1 == S2) return 0.0;
  const double mean_part = (m1 - m2).squaredNorm();
  if (S1.size() == 1) {
    if (S1(0, 0) < -1e-12 || S2(0, 0) < -1e-12)
      throw std::invalid_argument("gaussian_w2: variance must be non-negative");
    const double r = std::sqrt(std::max(S1(0, 0), 0.0)) - std::sqrt(std::max(S2(0, 0), 0.0));
    return std::sqrt(mean_part + r * r);
  }
  const Mat r2 = sqrtm_psd(S2);
  const Mat cross = sqrtm_psd(symmetrized(r2 * S1 * r2));
  const double cov_part = (S1 + S2 - 2.0 * cross).trace();
  return std::sqrt(std::max(0.0, mean_part + cov_part));
}

double folded_normal_mean(double mu, double var) {
  if (var <= 0.0) return std::abs(mu);
  const double sd = std::sqrt(var);
  return sd * std::sqrt(2.0 / M_PI) * std::exp(-mu * mu / (2.0 * var)) + mu * std::erf(mu / (sd * M_SQRT2));
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace {

double transform(double mean, const std::string& quantity, int p) {
  if (quantity == "cov_err_2p" && p != 1) return std::pow(std::max(mean, 0.0), 1.0 / p);
  return mean;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<CurvePoint> mse_curve(std::span<const TrialRecord> records, const std::string& quantity,
                                  double t, int p, std::uint64_t bootstrap_seed, int n_boot, int level) {
  std::map<std::int64_t, std::vector<std::pair<std::uint64_t, double>>> by_n;
  for (const auto& r : records)
    if (r.quantity == quantity && r.level == level && std::abs(r.t - t) <= 1e-9 * std::max(1.0, t))
      by_n[r.N].emplace_back(r.trial, r.value);
  if (by_n.empty()) throw std::invalid_argument("mse_curve: no records for quantity '" + quantity + "'");

  std::vector<CurvePoint> curve;
  for (auto& [n, vals] : by_n) {
    if (vals.size() < kMinTrialsPerPoint)
      throw std::invalid_argument("mse_curve: N=" + std::to_string(n) + " has only " +
                                  std::to_string(vals.size()) + " trials (need " +
                                  std::to_string(kMinTrialsPerPoint) + ")");
    std::sort(vals.begin(), vals.end());
    std::vector<double> x;
    x.reserve(vals.size());
    for (const auto& v : vals) x.push_back(v.second);
    const double size = static_cast<double>(x.size());

    CurvePoint pt;
    pt.N = n;
    pt.n_trials = x.size();
    pt.estimate = transform(pairwise_sum(x) / size, quantity, p);

    std::vector<double> boot;
    boot.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> sample(x.size());
    std::uint64_t state = mix_seed(bootstrap_seed, static_cast<std::uint64_t>(n));
    for (int b = 0; b < n_boot; ++b) {
      for (auto& s : sample) {
        state = splitmix64(state);
        const auto idx = static_cast<std::size_t>(
            (static_cast<unsigned __int128>(state) * x.size()) >> 64);
        s = x[idx];
      }
      boot.push_back(transform(pairwise_sum(sample) / size, quantity, p));
    }
    if (n_boot > 0) {
      pt.low = quantile(boot, 0.025);
      pt.high = quantile(boot, 0.975);
    } else {
      pt.low = pt.high = pt.estimate;
    }
    curve.push_back(pt);
  }
  return curve;
}

LineFit least_squares_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("least_squares_line: need >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("least_squares_line: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return f;
}

RateFit rate_fit(std::span<const std::pair<double, double>> curve) {
  if (curve.size() < 3) throw std::invalid_argument("rate_fit: need at least 3 points");
  std::vector<double> lx, ly;
  for (const auto& [n, e] : curve) {
    if (!(e > 0.0) || !(n > 0.0)) throw std::invalid_argument("rate_fit: N and error values must be positive");
    lx.push_back(std::log(n));
    ly.push_back(std::log(e));
  }
  const LineFit lf = least_squares_line(lx, ly);
  return {{curve.begin(), curve.end()}, lf.slope, lf.intercept, lf.r_squared};
}

RateFit rate_fit(std::span<const CurvePoint> curve) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& c : curve) pts.emplace_back(static_cast<double>(c.N), c.estimate);
  return rate_fit(pts);
}

}  // namespace fpf
