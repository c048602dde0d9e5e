#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace fpf {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;

/// Raised when a numerical procedure cannot produce a trustworthy answer
/// (PSD loss, ensemble collapse, non-convergence, degenerate formulas).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

bool is_symmetric(const Mat& m, double tol);

double min_eigenvalue(const Mat& sym);
double max_eigenvalue(const Mat& sym);

/// Largest singular value.
double spectral_norm(const Mat& m);

/// Rank with singular values above max(rows, cols) * eps * sigma_max counted.
int numerical_rank(const CMat& m);

/// Symmetric PSD square root through an eigendecomposition, eigenvalues
/// clamped at zero when they are above -clamp_tol * max(1, |lambda_max|).
/// Throws std::invalid_argument for a clearly indefinite input.
Mat sqrtm_psd(const Mat& sym, double clamp_tol = 1e-12);

/// Solves F X + X F^T + Q = 0 by vectorization (small d only).
Mat solve_lyapunov(const Mat& f, const Mat& q);

/// Matrix exponential (Pade approximation with scaling and squaring).
Mat expm(const Mat& m);

std::string format_matrix(const Mat& m);

}  // namespace fpf
