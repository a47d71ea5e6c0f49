#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace mfsoc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// In-place symmetrization: M <- (M + M^T) / 2.
template <typename Derived>
void symmetrize(Eigen::MatrixBase<Derived>& m) {
  m = ((m + m.transpose()) * 0.5).eval();
}

[[nodiscard]] inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
  return m.rows() == m.cols() &&
         (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + m.cwiseAbs().maxCoeff());
}

/// Result of a positive-semidefiniteness check. On failure `witness` holds a
/// unit direction with witness^T M witness = min_eigenvalue < -tolerance.
struct PsdResult {
  bool psd = false;
  double min_eigenvalue = 0.0;
  Vector witness;
};

/// PSD check with the relative floor  min eig >= -tol * (1 + ||M||_F).
/// Pre: M symmetric within 1e-12 (throws std::invalid_argument otherwise).
[[nodiscard]] inline PsdResult is_psd(const Matrix& m, double tol = 1e-10) {
  if (!is_symmetric(m))
    throw std::invalid_argument("is_psd: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("is_psd: eigendecomposition failed");
  PsdResult r;
  r.min_eigenvalue = es.eigenvalues().minCoeff();
  r.psd = r.min_eigenvalue >= -tol * (1.0 + m.norm());
  if (!r.psd) {
    Eigen::Index which;
    es.eigenvalues().minCoeff(&which);
    r.witness = es.eigenvectors().col(which);
  }
  return r;
}

/// Symmetric PSD square root. Eigenvalues in [-tol*(1+||M||_F), 0) are
/// clamped to zero; anything lower throws (the input was not PSD).
[[nodiscard]] inline Matrix symmetric_sqrt(const Matrix& m, double tol = 1e-10) {
  if (!is_symmetric(m))
    throw std::invalid_argument("symmetric_sqrt: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("symmetric_sqrt: eigendecomposition failed");
  const double floor = -tol * (1.0 + m.norm());
  Vector d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] < floor)
      throw std::invalid_argument("symmetric_sqrt: matrix is not positive semidefinite");
    d[i] = std::sqrt(std::max(d[i], 0.0));
  }
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace mfsoc
