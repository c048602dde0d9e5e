#include "fpf/linalg.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace fpf {

bool is_symmetric(const Mat& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

double min_eigenvalue(const Mat& sym) {
  if (sym.size() == 1) return sym(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue(const Mat& sym) {
  if (sym.size() == 1) return sym(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  if (m.size() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

int numerical_rank(const CMat& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<CMat> svd(m);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double thresh = static_cast<double>(std::max(m.rows(), m.cols())) *
                        std::numeric_limits<double>::epsilon() * smax;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > thresh && sv(i) > 0.0) ++rank;
  return rank;
}

Mat sqrtm_psd(const Mat& sym, double clamp_tol) {
  if (sym.size() == 1) {
    const double v = sym(0, 0);
    if (v < -clamp_tol * std::max(1.0, std::abs(v)))
      throw std::invalid_argument("sqrtm_psd: matrix is not positive semi-definite");
    return Mat::Constant(1, 1, std::sqrt(std::max(v, 0.0)));
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym));
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -clamp_tol * scale)
      throw std::invalid_argument("sqrtm_psd: matrix is not positive semi-definite");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Mat solve_lyapunov(const Mat& f, const Mat& q) {
  const Eigen::Index d = f.rows();
  const Mat eye = Mat::Identity(d, d);
  // vec(F X + X F^T) = (I (x) F + F (x) I) vec(X)
  const Mat op = Eigen::kroneckerProduct(eye, f) + Eigen::kroneckerProduct(f, eye);
  const Vec rhs = -Eigen::Map<const Vec>(q.data(), d * d);
  const Vec x = op.fullPivLu().solve(rhs);
  return symmetrized(Eigen::Map<const Mat>(x.data(), d, d));
}

Mat expm(const Mat& m) { return m.exp(); }

std::string format_matrix(const Mat& m) {
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) os << ", ";
    os << '[';
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ", ";
      os << m(r, c);
    }
    os << ']';
  }
  os << ']';
  return os.str();
}

}  // namespace fpf
