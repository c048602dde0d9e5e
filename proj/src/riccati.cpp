#include "fpf/riccati.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "fpf/csv.hpp"

namespace fpf {

Mat ricc_rhs(const CovMatrix& Q, const ModelParams& p) {
  if (Q.rows() != p.d || Q.cols() != p.d) throw std::invalid_argument("ricc_rhs: Q must be d x d");
  const Mat QHt = Q * p.H.transpose();
  const Mat AQ = p.A * Q;
  return AQ + AQ.transpose() + p.Sigma_B - QHt * QHt.transpose();
}

Mat sqrt_ricc(const CovMatrix& Q, const ModelParams& p) {
  if (Q.rows() != p.d || Q.cols() != p.d) throw std::invalid_argument("sqrt_ricc: Q must be d x d");
  return p.A - 0.5 * Q * (p.H.transpose() * p.H);
}

namespace {

void check_psd(const CovMatrix& s, const char* where) {
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if (!s.allFinite() || min_eigenvalue(s) < -kPsdTol * scale)
    throw NumericalError(std::string(where) +
                         ": covariance lost positive semi-definiteness; reduce the step size");
}

}  // namespace

CovMatrix dre_rk4_step(const CovMatrix& s, const ModelParams& p, double h) {
  const Mat k1 = ricc_rhs(s, p);
  const Mat k2 = ricc_rhs(s + (0.5 * h) * k1, p);
  const Mat k3 = ricc_rhs(s + (0.5 * h) * k2, p);
  const Mat k4 = ricc_rhs(s + h * k3, p);
  CovMatrix next = symmetrized(s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  check_psd(next, "dre_rk4_step");
  return next;
}

Mat MatrixPath::at(double t) const {
  const std::size_t n = nodes.size();
  if (n == 0) throw std::logic_error("MatrixPath::at on an empty path");
  if (n == 1) return nodes[0];
  const double x = (t - t0) / dt;
  const double r = std::nearbyint(x);
  if (std::abs(x - r) < 1e-9 && r >= 0.0 && r <= static_cast<double>(n - 1))
    return nodes[static_cast<std::size_t>(r)];
  if (n < 4) {
    const auto k = static_cast<std::size_t>(std::clamp(std::floor(x), 0.0, static_cast<double>(n - 2)));
    const double u = x - static_cast<double>(k);
    return (1.0 - u) * nodes[k] + u * nodes[k + 1];
  }
  const double kf = std::floor(x) - 1.0;
  const auto j = static_cast<std::size_t>(std::clamp(kf, 0.0, static_cast<double>(n - 4)));
  const double u = x - static_cast<double>(j);
  const double w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0;
  const double w1 = u * (u - 2.0) * (u - 3.0) / 2.0;
  const double w2 = -u * (u - 1.0) * (u - 3.0) / 2.0;
  const double w3 = u * (u - 1.0) * (u - 2.0) / 6.0;
  return w0 * nodes[j] + w1 * nodes[j + 1] + w2 * nodes[j + 2] + w3 * nodes[j + 3];
}

MatrixPath integrate_dre(const CovMatrix& sigma0, const ModelParams& p, const TimeGrid& grid) {
  if (sigma0.rows() != p.d || sigma0.cols() != p.d)
    throw std::invalid_argument("integrate_dre: Sigma0 must be d x d");
  MatrixPath path{grid.t0, grid.dt, {}};
  path.nodes.reserve(static_cast<std::size_t>(grid.n_steps + 1));
  path.nodes.push_back(symmetrized(sigma0));
  check_psd(path.nodes.back(), "integrate_dre");
  for (std::int64_t k = 0; k < grid.n_steps; ++k)
    path.nodes.push_back(dre_rk4_step(path.nodes.back(), p, grid.dt));
  return path;
}

double fit_m1(const CovMatrix& sigma0, const CovMatrix& sigma_inf, const ModelParams& p, double rate,
              double horizon) {
  const double hth = spectral_norm(p.H.transpose() * p.H);
  const double h = std::min(1e-3, 0.5 / (2.0 * spectral_norm(p.A) +
                                         2.0 * std::max(spectral_norm(sigma0), spectral_norm(sigma_inf)) * hth + 1.0));
  const auto steps = static_cast<std::int64_t>(std::min(5e6, std::ceil(horizon / h)));
  const double floor_level = 1e-11 * (1.0 + spectral_norm(sigma_inf));
  CovMatrix s = symmetrized(sigma0);
  double best = spectral_norm(s - sigma_inf);
  for (std::int64_t k = 1; k <= steps; ++k) {
    s = dre_rk4_step(s, p, h);
    const double gap = spectral_norm(s - sigma_inf);
    if (gap <= floor_level) break;
    best = std::max(best, gap * std::exp(rate * h * static_cast<double>(k)));
  }
  return best;
}

StabilityConstants solve_are(const ModelParams& p, const AreOptions& opts) {
  const AssumptionReport rep = validate_assumptions(p);
  if (!rep.a1)
    throw std::domain_error("solve_are requires detectable (A,H) and stabilizable (A,sigma_B): " +
                            rep.describe());

  StabilityConstants c;
  const Mat hth = p.H.transpose() * p.H;
  const double hth_norm = spectral_norm(hth);
  const double a_norm = spectral_norm(p.A);
  auto rel_residual = [&](const Mat& s) {
    return ricc_rhs(s, p).norm() / (1.0 + s.norm());
  };

  // Burn-in along the DRE flow, which converges to the stabilizing solution.
  CovMatrix s = Mat::Identity(p.d, p.d);
  double checkpoint = rel_residual(s);
  c.residual_history.push_back(checkpoint);
  for (std::int64_t k = 1; k <= opts.max_burn_in_steps; ++k) {
    const double h = std::min(50.0, 0.5 / (2.0 * a_norm + 2.0 * spectral_norm(s) * hth_norm + 1e-12));
    s = dre_rk4_step(s, p, h);
    if (k % 1000 == 0) {
      const double r = rel_residual(s);
      c.residual_history.push_back(r);
      if (r <= opts.burn_in_tol || (r < 1e-4 && r > 0.99 * checkpoint)) break;
      checkpoint = r;
    }
  }

  // Newton polish: solve F D + D F^T + Ricc(S) = 0 with F = A - S H^T H.
  CovMatrix best = s;
  double best_res = ricc_rhs(s, p).norm();
  int stalls = 0;
  for (int it = 0; it < opts.max_newton_iterations && stalls < 3; ++it) {
    const Mat f = p.A - s * hth;
    const Mat delta = solve_lyapunov(f, ricc_rhs(s, p));
    if (!delta.allFinite()) break;
    s = symmetrized(s + delta);
    const double res = ricc_rhs(s, p).norm();
    c.residual_history.push_back(res / (1.0 + s.norm()));
    if (res < best_res) {
      if (res > 0.5 * best_res) ++stalls;
      best = s;
      best_res = res;
    } else {
      ++stalls;
    }
    if (best_res <= 1e-15 * (1.0 + best.norm())) break;
  }

  c.Sigma_inf = best;
  c.are_residual = best_res;
  if (!(best_res <= opts.residual_tol * (1.0 + best.norm()))) {
    std::ostringstream os;
    os << "solve_are did not converge: residual " << format_double(best_res) << "; history:";
    for (double r : c.residual_history) os << ' ' << format_double(r);
    throw NumericalError(os.str());
  }
  const double lmin = min_eigenvalue(best);
  const double lmax = max_eigenvalue(best);
  if (!(lmin > 0.0)) throw NumericalError("solve_are: ARE solution is not positive definite");

  c.F_inf = p.A - best * hth;
  Eigen::EigenSolver<Mat> es(c.F_inf, false);
  c.lambda0 = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    c.lambda0 = std::min(c.lambda0, -es.eigenvalues()(i).real());
  if (!(c.lambda0 > 0.0)) throw NumericalError("solve_are: closed-loop matrix is not Hurwitz");

  c.beta = rep.lambda_min_Sigma_B / (2.0 * lmax);
  c.lambda_fit = 0.9 * c.lambda0;
  c.m1_rate = std::max(2.0 * c.lambda_fit, c.beta);
  c.M1_hat = fit_m1(p.Sigma0, best, p, c.m1_rate, opts.fit_horizon_factor / c.lambda0);
  const double cond = lmax / lmin;
  c.alpha = std::exp(std::sqrt(cond) * c.M1_hat * hth_norm / (2.0 * c.beta)) * std::sqrt(cond);
  return c;
}

std::string StabilityConstants::report() const {
  std::ostringstream os;
  os << "sigma_inf = " << format_matrix(Sigma_inf) << '\n'
     << "f_inf = " << format_matrix(F_inf) << '\n'
     << "lambda0 = " << format_double(lambda0) << '\n'
     << "alpha = " << format_double(alpha) << '\n'
     << "beta = " << format_double(beta) << '\n'
     << "m1_hat = " << format_double(M1_hat) << '\n'
     << "are_residual = " << format_double(are_residual) << '\n'
     << "lambda_fit = " << format_double(lambda_fit) << '\n'
     << "m1_rate = " << format_double(m1_rate) << '\n';
  return os.str();
}

namespace {

constexpr std::array<double, 4> kGlNodes = {0.1834346424956498049, 0.5255324099163289858,
                                            0.7966664774136267396, 0.9602898564975362317};
constexpr std::array<double, 4> kGlWeights = {0.3626837833783619830, 0.3137066458778872873,
                                              0.2223810344533744706, 0.1012285362903762592};

template <class F>
Mat gauss_legendre8(F&& f, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  Mat acc;
  for (std::size_t i = 0; i < kGlNodes.size(); ++i) {
    const Mat pair = f(mid - half * kGlNodes[i]) + f(mid + half * kGlNodes[i]);
    acc = (i == 0) ? Mat(kGlWeights[i] * pair) : Mat(acc + kGlWeights[i] * pair);
  }
  return half * acc;
}

template <class F>
Mat adaptive_gl(F& f, double a, double b, const Mat& whole, double tol, int depth) {
  const double mid = 0.5 * (a + b);
  const Mat left = gauss_legendre8(f, a, mid);
  const Mat right = gauss_legendre8(f, mid, b);
  const Mat refined = left + right;
  if (depth <= 0 || (refined - whole).cwiseAbs().maxCoeff() <= tol) return refined;
  return adaptive_gl(f, a, mid, left, 0.5 * tol, depth - 1) +
         adaptive_gl(f, mid, b, right, 0.5 * tol, depth - 1);
}

}  // namespace

Mat observability_gramian(const Mat& F, const Mat& W, double t, double abs_tol) {
  if (t < 0.0) throw std::invalid_argument("observability_gramian: t must be non-negative");
  if (t == 0.0) return Mat::Zero(F.rows(), F.cols());
  auto integrand = [&](double s) {
    const Mat e = expm(F * s);
    return Mat(e.transpose() * W * e);
  };
  const Mat whole = gauss_legendre8(integrand, 0.0, t);
  return symmetrized(adaptive_gl(integrand, 0.0, t, whole, abs_tol, 30));
}

CovMatrix explicit_dre_solution(const CovMatrix& sigma0, const StabilityConstants& c,
                                const ModelParams& p, double t) {
  const Mat gap = symmetrized(sigma0 - c.Sigma_inf);
  if (gap.norm() <= 1e-14 * (1.0 + c.Sigma_inf.norm())) return c.Sigma_inf;
  Eigen::JacobiSVD<Mat> svd(gap);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-12 * sv(0))
    throw NumericalError(
        "explicit_dre_solution: Sigma0 - Sigma_inf is singular but nonzero; the closed form is "
        "undefined");
  const Mat d_t = gap.inverse() + observability_gramian(c.F_inf, p.H.transpose() * p.H, t);
  const Mat e = expm(c.F_inf * t);
  return symmetrized(c.Sigma_inf + e * d_t.inverse() * e.transpose());
}

namespace {

// RK4 for Y' = (A - coef * Q(t) H^T H) Y, reporting Y at each target time.
std::vector<Mat> linear_flow(double s, const std::vector<double>& times, const MatrixPath& path,
                             const ModelParams& p, double coef, const char* who) {
  const double tol = 1e-9 * path.dt;
  if (path.nodes.empty()) throw std::invalid_argument(std::string(who) + ": empty path");
  if (s < path.t0 - tol || s > path.t_end() + tol)
    throw std::out_of_range(std::string(who) + ": path does not cover the start time");
  const Mat hth = p.H.transpose() * p.H;
  auto gen = [&](double t) { return Mat(p.A - coef * path.at(t) * hth); };

  std::vector<Mat> out;
  out.reserve(times.size());
  Mat y = Mat::Identity(p.d, p.d);
  double tau = s;
  for (double target : times) {
    if (target < tau - tol) throw std::invalid_argument(std::string(who) + ": times must ascend from s");
    if (target > path.t_end() + tol)
      throw std::out_of_range(std::string(who) + ": path does not cover the end time");
    while (target - tau > tol) {
      const double k_next = std::floor((tau - path.t0) / path.dt + 1e-9) + 1.0;
      const double node_t = path.t0 + k_next * path.dt;
      const double stop = std::min(node_t, target);
      const double h = stop - tau;
      const Mat m1 = gen(tau);
      const Mat mh = gen(tau + 0.5 * h);
      const Mat m2 = gen(stop);
      const Mat k1 = m1 * y;
      const Mat k2 = mh * (y + (0.5 * h) * k1);
      const Mat k3 = mh * (y + (0.5 * h) * k2);
      const Mat k4 = m2 * (y + h * k3);
      y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      tau = stop;
    }
    out.push_back(y);
  }
  return out;
}

}  // namespace

Mat transition_phi(double s, double t, const MatrixPath& sigma_path, const ModelParams& p) {
  return linear_flow(s, {t}, sigma_path, p, 1.0, "transition_phi").front();
}

Mat transition_psi(double s, double t, const MatrixPath& q_path, const ModelParams& p) {
  return linear_flow(s, {t}, q_path, p, 0.5, "transition_psi").front();
}

std::vector<Mat> psi_flow(double s, const std::vector<double>& times, const MatrixPath& q_path,
                          const ModelParams& p) {
  return linear_flow(s, times, q_path, p, 0.5, "psi_flow");
}

std::vector<Mat> phi_flow(double s, const std::vector<double>& times, const MatrixPath& sigma_path,
                          const ModelParams& p) {
  return linear_flow(s, times, sigma_path, p, 1.0, "phi_flow");
}

PhiEnvelope fit_phi_envelope(const MatrixPath& sigma_path, const ModelParams& p, double lambda,
                             double t_start, int n_grid) {
  PhiEnvelope env{t_start, lambda, 0.0};
  const double t_end = sigma_path.t_end();
  if (t_start >= t_end || n_grid < 2) throw std::invalid_argument("fit_phi_envelope: empty fit window");
  std::vector<double> grid(static_cast<std::size_t>(n_grid));
  for (int i = 0; i < n_grid; ++i) grid[i] = t_start + (t_end - t_start) * i / (n_grid - 1);
  for (int i = 0; i < n_grid; ++i) {
    const std::vector<double> targets(grid.begin() + i, grid.end());
    const auto flows = phi_flow(grid[i], targets, sigma_path, p);
    for (std::size_t j = 0; j < targets.size(); ++j)
      env.kappa = std::max(env.kappa, spectral_norm(flows[j]) * std::exp(lambda * (targets[j] - grid[i])));
  }
  return env;
}

}  // namespace fpf
