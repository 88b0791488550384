#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace finv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

namespace linalg {

inline double symmetry_residual(const Mat& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Principal square root of a symmetric positive semidefinite matrix.
inline Mat sqrt_psd(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym));
  const Vec roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return symmetrized(es.eigenvectors() * roots.asDiagonal() *
                     es.eigenvectors().transpose());
}

inline Eigen::VectorXcd eigenvalues(const Mat& m) {
  Eigen::EigenSolver<Mat> es(m, false);
  return es.eigenvalues();
}

inline double spectral_radius(const Mat& m) {
  return eigenvalues(m).cwiseAbs().maxCoeff();
}

/// Solves Aᵀ X A − s·X = −Q for symmetric X through the Kronecker form.
/// Sized for the reduced dimensions this library works in (n ≲ 10).
inline Mat solve_scaled_stein(const Mat& a, double s, const Mat& q) {
  const Eigen::Index n = a.rows();
  Mat k(n * n, n * n);
  // vec(Aᵀ X A) = (Aᵀ ⊗ Aᵀ) vec(X)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      k.block(i * n, j * n, n, n) = a(j, i) * a.transpose();
  k -= s * Mat::Identity(n * n, n * n);
  const Vec rhs = -Eigen::Map<const Vec>(q.data(), n * n);
  const Vec x = k.fullPivLu().solve(rhs);
  return symmetrized(Eigen::Map<const Mat>(x.data(), n, n));
}

}  // namespace linalg
}  // namespace finv
