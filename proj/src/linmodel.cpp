#include "fpf/linmodel.hpp"

#include <cmath>
#include <ostream>
#include <sstream>
#include <vector>

#include "fpf/csv.hpp"

namespace fpf {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("ModelParams: " + what);
}

bool psd(const Mat& s) {
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  return min_eigenvalue(symmetrized(s)) >= -1e-12 * scale;
}

Mat read_matrix(const nlohmann::json& j, const char* key, int rows, int cols) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || static_cast<int>(arr.size()) != rows * cols)
    throw std::invalid_argument(std::string("model config: '") + key + "' must hold " +
                                std::to_string(rows * cols) + " numbers");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = arr.at(r * cols + c).get<double>();
  return m;
}

std::vector<double> row_major(const Mat& m) {
  std::vector<double> v;
  v.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

}  // namespace

ModelParams ModelParams::make(Mat A, Mat H, Mat sigma_B, Vec m0, Mat Sigma0) {
  ModelParams p;
  p.d = static_cast<int>(A.rows());
  require(p.d > 0 && A.cols() == p.d, "A must be square and non-empty");
  p.m = static_cast<int>(H.rows());
  require(p.m > 0 && H.cols() == p.d, "H must be m x d");
  require(sigma_B.rows() == p.d && sigma_B.cols() > 0, "sigma_B must be d x d_B");
  p.d_B = static_cast<int>(sigma_B.cols());
  require(m0.size() == p.d, "m0 must have d entries");
  require(Sigma0.rows() == p.d && Sigma0.cols() == p.d, "Sigma0 must be d x d");
  require(is_symmetric(Sigma0, 1e-12), "Sigma0 must be symmetric");
  require(psd(Sigma0), "Sigma0 must be positive semi-definite");
  require(A.allFinite() && H.allFinite() && sigma_B.allFinite() && m0.allFinite() &&
              Sigma0.allFinite(),
          "entries must be finite");
  p.A = std::move(A);
  p.H = std::move(H);
  p.sigma_B = std::move(sigma_B);
  p.Sigma_B = symmetrized(p.sigma_B * p.sigma_B.transpose());
  p.m0 = std::move(m0);
  p.Sigma0 = symmetrized(Sigma0);
  return p;
}

ModelParams ModelParams::scalar(double a, double h, double sigma_b, double m0, double sigma0) {
  return make(Mat::Constant(1, 1, a), Mat::Constant(1, 1, h), Mat::Constant(1, 1, sigma_b),
              Vec::Constant(1, m0), Mat::Constant(1, 1, sigma0));
}

TimeGrid TimeGrid::make(double T, double dt) {
  if (!(dt > 0.0) || !(T > 0.0) || !std::isfinite(T) || !std::isfinite(dt))
    throw std::invalid_argument("TimeGrid: T and dt must be positive and finite");
  TimeGrid g;
  g.T = T;
  g.dt = dt;
  g.n_steps = static_cast<std::int64_t>(std::llround(T / dt));
  if (g.n_steps < 1 || std::abs(static_cast<double>(g.n_steps) * dt - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("TimeGrid: T must be an integer multiple of dt");
  return g;
}

TimeGrid TimeGrid::refined() const {
  TimeGrid g = *this;
  g.dt = dt * 0.5;
  g.n_steps = n_steps * 2;
  g.refinement = refinement + 1;
  return g;
}

std::int64_t TimeGrid::node(double t) const {
  const double x = (t - t0) / dt;
  const auto k = static_cast<std::int64_t>(std::llround(x));
  if (k < 0 || k > n_steps || std::abs(x - static_cast<double>(k)) > 1e-6)
    throw std::out_of_range("time " + format_double(t) + " is not a node of the grid");
  return k;
}

TruthPath simulate_truth_from(const ModelParams& params, const TimeGrid& grid,
                              const NoiseBundle& noise, const Vec& x0) {
  if (x0.size() != params.d) throw std::invalid_argument("simulate_truth: x0 has wrong size");
  TruthPath path{grid, Mat(params.d, grid.n_steps + 1)};
  path.states.col(0) = x0;
  const double sq = std::sqrt(grid.dt);
  const Mat drift = Mat::Identity(params.d, params.d) + grid.dt * params.A;
  const Mat gain = sq * params.sigma_B;
  Vec z(params.d_B);
  for (std::int64_t k = 0; k < grid.n_steps; ++k) {
    standard_increments(noise, static_cast<std::uint64_t>(k), 0, {z.data(), static_cast<std::size_t>(z.size())},
                        grid.refinement);
    path.states.col(k + 1) = drift * path.states.col(k) + gain * z;
  }
  return path;
}

TruthPath simulate_truth(const ModelParams& params, const TimeGrid& grid, const NoiseBundle& noise) {
  Vec z(params.d);
  initial_normals(noise, 0, {z.data(), static_cast<std::size_t>(z.size())});
  const Vec x0 = params.m0 + sqrtm_psd(params.Sigma0) * z;
  return simulate_truth_from(params, grid, noise, x0);
}

ObservationIncrements simulate_observations(const ModelParams& params, const TimeGrid& grid,
                                            const TruthPath& truth, const NoiseBundle& noise) {
  if (truth.states.rows() != params.H.cols())
    throw std::invalid_argument("simulate_observations: H and truth dimensions differ");
  if (truth.states.cols() != grid.n_steps + 1)
    throw std::invalid_argument("simulate_observations: truth is not defined on this grid");
  ObservationIncrements obs{grid, Mat(params.m, grid.n_steps)};
  const double sq = std::sqrt(grid.dt);
  Vec w(params.m);
  for (std::int64_t k = 0; k < grid.n_steps; ++k) {
    standard_increments(noise, static_cast<std::uint64_t>(k), 0, {w.data(), static_cast<std::size_t>(w.size())},
                        grid.refinement);
    obs.dZ.col(k) = grid.dt * (params.H * truth.states.col(k)) + sq * w;
  }
  return obs;
}

AssumptionReport validate_assumptions(const ModelParams& params) {
  AssumptionReport rep;
  const int d = params.d;
  Eigen::EigenSolver<Mat> es(params.A, false);
  const Eigen::VectorXcd eig = es.eigenvalues();

  rep.mu_A = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < eig.size(); ++i) rep.mu_A = std::min(rep.mu_A, -eig(i).real());
  rep.a3 = rep.mu_A > kEigenRealTol;

  rep.detectable = true;
  rep.stabilizable = true;
  const CMat a = params.A.cast<std::complex<double>>();
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (eig(i).real() < -kEigenRealTol) continue;
    const CMat shifted = eig(i) * CMat::Identity(d, d) - a;
    CMat obs(d + params.m, d);
    obs << shifted, params.H.cast<std::complex<double>>();
    if (numerical_rank(obs) < d) rep.detectable = false;
    CMat ctrl(d, d + params.d_B);
    ctrl << shifted, params.sigma_B.cast<std::complex<double>>();
    if (numerical_rank(ctrl) < d) rep.stabilizable = false;
  }
  rep.a1 = rep.detectable && rep.stabilizable;
  rep.lambda_min_Sigma_B = min_eigenvalue(params.Sigma_B);
  rep.a2 = rep.lambda_min_Sigma_B > kSigmaBTol;
  return rep;
}

std::string AssumptionReport::describe() const {
  std::ostringstream os;
  os << "A1 " << (a1 ? "ok" : "FAILED") << " (detectable=" << detectable
     << ", stabilizable=" << stabilizable << "); A2 " << (a2 ? "ok" : "FAILED")
     << " (lambda_min(Sigma_B)=" << format_double(lambda_min_Sigma_B) << "); A3 "
     << (a3 ? "ok" : "FAILED") << " (mu(A)=" << format_double(mu_A) << ")";
  return os.str();
}

ModelParams model_from_json(const nlohmann::json& j) {
  const int d = j.contains("d") ? j.at("d").get<int>()
                                : static_cast<int>(std::lround(std::sqrt(j.at("A").size())));
  if (d <= 0) throw std::invalid_argument("model config: d must be positive");
  const int m = j.contains("m") ? j.at("m").get<int>() : static_cast<int>(j.at("H").size()) / d;
  const int d_B = j.contains("d_B") ? j.at("d_B").get<int>()
                                    : static_cast<int>(j.at("sigma_B").size()) / d;
  const Mat A = read_matrix(j, "A", d, d);
  const Mat H = read_matrix(j, "H", m, d);
  const Mat sigma_B = read_matrix(j, "sigma_B", d, d_B);
  const Mat m0 = read_matrix(j, "m0", d, 1);
  const Mat Sigma0 = read_matrix(j, "Sigma0", d, d);
  return ModelParams::make(A, H, sigma_B, m0.col(0), Sigma0);
}

nlohmann::json model_to_json(const ModelParams& p) {
  return {{"d", p.d},
          {"m", p.m},
          {"d_B", p.d_B},
          {"A", row_major(p.A)},
          {"H", row_major(p.H)},
          {"sigma_B", row_major(p.sigma_B)},
          {"m0", row_major(p.m0)},
          {"Sigma0", row_major(p.Sigma0)}};
}

void write_path_csv(std::ostream& os, const TruthPath& path) {
  os << "time,component,value\n";
  for (Eigen::Index k = 0; k < path.states.cols(); ++k)
    for (Eigen::Index c = 0; c < path.states.rows(); ++c)
      os << format_double(path.grid.time(k)) << ',' << c << ',' << format_double(path.states(c, k))
         << '\n';
}

}  // namespace fpf
