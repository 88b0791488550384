#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "finv/ellipsoid.hpp"

namespace finv {

struct MveeOptions {
  double tol = 1e-7;
  int max_iterations = 100000;
  // Full recomputation of the dual moment matrix every this many rank-one
  // updates, to stop drift in the maintained inverse.
  int refresh_every = 64;
};

struct MveeResult {
  Ellipsoid ellipsoid;
  int iterations = 0;
  bool converged = false;
  /// Set when the points were affinely rank-deficient and a ridge was added.
  bool degenerate = false;
  /// Final duality measure max(ε₊, ε₋).
  double gap = 0.0;
};

namespace detail {

inline bool affinely_degenerate(const Mat& pts) {
  const Eigen::Index d = pts.rows();
  const Eigen::Index n = pts.cols();
  if (n < d + 1) return true;
  const Vec mean = pts.rowwise().mean();
  const Mat centered = pts.colwise() - mean;
  Eigen::JacobiSVD<Mat> svd(centered);
  const Vec sv = svd.singularValues();
  return sv.minCoeff() <= 1e-10 * std::max(sv.maxCoeff(), 1e-300);
}

}  // namespace detail

/// Minimum-volume enclosing ellipsoid of a point cloud.
///
/// Khachiyan's weight iteration on the dual, with the Todd–Yildirim away
/// steps so the duality measure reaches `tol` in a few hundred iterations
/// rather than O(1/tol). Each update is rank one, so the inverse of the
/// lifted moment matrix and all point leverages are updated in O(n·d).
/// The returned ellipsoid is rescaled so every input point satisfies
/// ||Ap − b|| ≤ 1.
inline MveeResult mvee(std::span<const Vec> points, const MveeOptions& opt = {}) {
  require(!points.empty(), "mvee requires at least one point");
  require(opt.tol > 0.0, "mvee tolerance must be positive");
  const Eigen::Index d = points.front().size();
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  const Eigen::Index lifted = d + 1;

  Mat pts(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    require(points[j].size() == d, "mvee points have inconsistent dimensions");
    pts.col(j) = points[j];
  }
  Mat q(lifted, n);
  q.topRows(d) = pts;
  q.row(d).setOnes();

  const bool degenerate = detail::affinely_degenerate(pts);
  // Ridge on the spatial block of the moment matrix for flat clouds.
  double ridge = 0.0;
  if (degenerate) {
    const Vec mean = pts.rowwise().mean();
    const double spread = (pts.colwise() - mean).squaredNorm() / static_cast<double>(n);
    ridge = 1e-9 * std::max(spread, 1e-12);
  }

  Vec u = Vec::Constant(n, 1.0 / static_cast<double>(n));
  Mat x_inv;
  Vec lev(n);  // leverages M_j = q_jᵀ X⁻¹ q_j

  auto recompute = [&] {
    Mat x = q * u.asDiagonal() * q.transpose();
    x.topLeftCorner(d, d).diagonal().array() += ridge;
    x_inv = x.ldlt().solve(Mat::Identity(lifted, lifted));
    lev = (q.transpose() * x_inv).cwiseProduct(q.transpose()).rowwise().sum();
  };
  recompute();

  const double target = static_cast<double>(lifted);
  int it = 0;
  double gap = 0.0;
  bool converged = false;
  for (; it < opt.max_iterations; ++it) {
    Eigen::Index j_max = 0;
    lev.maxCoeff(&j_max);
    Eigen::Index j_min = -1;
    for (Eigen::Index j = 0; j < n; ++j)
      if (u[j] > 0.0 && (j_min < 0 || lev[j] < lev[j_min])) j_min = j;

    const double eps_plus = lev[j_max] / target - 1.0;
    const double eps_minus = 1.0 - lev[j_min] / target;
    gap = std::max(eps_plus, eps_minus);
    if (gap <= opt.tol) {
      converged = true;
      break;
    }

    Eigen::Index j;
    double alpha, sigma;  // X ← αX + σ q_j q_jᵀ
    if (eps_plus >= eps_minus) {
      j = j_max;
      const double kappa = lev[j];
      const double step = (kappa - target) / (target * (kappa - 1.0));
      u *= (1.0 - step);
      u[j] += step;
      alpha = 1.0 - step;
      sigma = step;
    } else {
      j = j_min;
      const double kappa = lev[j];
      double step = (target - kappa) / (target * (kappa - 1.0));
      step = std::min(step, u[j] / (1.0 - u[j]));
      u *= (1.0 + step);
      u[j] -= step;
      if (u[j] < 1e-300) u[j] = 0.0;
      alpha = 1.0 + step;
      sigma = -step;
    }

    if (ridge > 0.0 || (it + 1) % opt.refresh_every == 0) {
      recompute();
      continue;
    }
    // Sherman–Morrison on X' = α(X + τ q qᵀ).
    const double tau = sigma / alpha;
    const Vec w = x_inv * q.col(j);
    const double denom = 1.0 + tau * lev[j];
    const Vec proj = q.transpose() * w;
    x_inv = (x_inv - (tau / denom) * w * w.transpose()) / alpha;
    lev = (lev.array() - (tau / denom) * proj.array().square()) / alpha;
  }

  const Vec center = pts * u;
  Mat cov = pts * u.asDiagonal() * pts.transpose() - center * center.transpose();
  cov.diagonal().array() += ridge;
  Mat metric = linalg::symmetrized(cov.ldlt().solve(Mat::Identity(d, d))) /
               static_cast<double>(d);

  double worst = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vec r = pts.col(j) - center;
    worst = std::max(worst, r.dot(metric * r));
  }
  if (worst > 0.0) metric /= worst;

  return MveeResult{Ellipsoid::from_center_metric(center, metric), it, converged,
                    degenerate, gap};
}

inline MveeResult mvee(const std::vector<Vec>& points, const MveeOptions& opt = {}) {
  return mvee(std::span<const Vec>(points), opt);
}

}  // namespace finv
