#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "finv/linalg.hpp"
#include "finv/rng.hpp"

namespace finv {

/// Slack on the closed-set test ||Ax − b|| ≤ 1 that absorbs roundoff from
/// forming A and b (points built to sit on the boundary must test inside).
inline constexpr double kBoundaryTolerance = 1e-12;

/// Volume of the unit ball in `dim` dimensions, π^{d/2} / Γ(d/2 + 1).
inline double unit_ball_volume(int dim) {
  return std::exp(0.5 * dim * std::log(std::numbers::pi) -
                  std::lgamma(0.5 * dim + 1.0));
}

/// The ellipsoid {x : ||A x − b||₂ ≤ 1} with A symmetric positive definite.
///
/// Immutable after construction. The center A⁻¹b and the inverse shape are
/// cached so membership and sampling cost O(dim²).
class Ellipsoid {
 public:
  Ellipsoid(Mat shape, Vec offset) : a_(std::move(shape)), b_(std::move(offset)) {
    require(a_.rows() > 0 && a_.rows() == a_.cols(),
            "ellipsoid shape must be a non-empty square matrix");
    require(b_.size() == a_.rows(), "ellipsoid offset has the wrong dimension");
    require(a_.allFinite() && b_.allFinite(), "ellipsoid has non-finite entries");
    require(linalg::symmetry_residual(a_) < 1e-10, "ellipsoid shape is not symmetric");
    a_ = linalg::symmetrized(a_);
    Eigen::SelfAdjointEigenSolver<Mat> es(a_);
    const Vec eig = es.eigenvalues();
    require(eig.minCoeff() > 0.0, "ellipsoid shape is not positive definite");
    a_inv_ = es.eigenvectors() * eig.cwiseInverse().asDiagonal() *
             es.eigenvectors().transpose();
    center_ = a_inv_ * b_;
    log_det_ = eig.array().log().sum();
    require(std::isfinite(volume()) && volume() > 0.0, "ellipsoid volume is degenerate");
  }

  /// {x : (x − c)ᵀ M (x − c) ≤ 1} for symmetric positive definite M.
  static Ellipsoid from_center_metric(const Vec& center, const Mat& metric) {
    require(center.size() == metric.rows(), "center/metric dimension mismatch");
    Mat a = linalg::sqrt_psd(metric);
    Vec b = a * center;
    return Ellipsoid(std::move(a), std::move(b));
  }

  static Ellipsoid ball(const Vec& center, double radius) {
    require(radius > 0.0, "ball radius must be positive");
    const auto n = center.size();
    return Ellipsoid(Mat::Identity(n, n) / radius, center / radius);
  }

  int dim() const { return static_cast<int>(a_.rows()); }
  const Mat& shape() const { return a_; }
  const Vec& offset() const { return b_; }
  const Vec& center() const { return center_; }
  Mat metric() const { return a_.transpose() * a_; }

  /// ||A x − b||₂; 1 on the boundary.
  double level(const Vec& x) const {
    require(x.size() == b_.size(), "point dimension does not match ellipsoid");
    return (a_ * x - b_).norm();
  }

  bool contains(const Vec& x) const { return level(x) <= 1.0 + kBoundaryTolerance; }

  double volume() const { return unit_ball_volume(dim()) * std::exp(-log_det_); }

  double log_det_shape() const { return log_det_; }

  /// Image of a unit-ball point u under x = A⁻¹(u + b).
  Vec from_unit_ball(const Vec& u) const { return a_inv_ * u + center_; }

  /// Affine image {T x + s : x ∈ E}, re-expressed with a symmetric shape.
  Ellipsoid transformed(const Mat& t, const Vec& s) const {
    const Mat t_inv = t.inverse();
    const Mat metric_img = t_inv.transpose() * metric() * t_inv;
    return from_center_metric(t * center_ + s, linalg::symmetrized(metric_img));
  }

  /// Same center, every semi-axis multiplied by `factor`.
  Ellipsoid scaled(double factor) const {
    require(factor > 0.0, "scale factor must be positive");
    return Ellipsoid(a_ / factor, b_ / factor);
  }

 private:
  Mat a_;
  Vec b_;
  Mat a_inv_;
  Vec center_;
  double log_det_ = 0.0;
};

/// Uniform point in the unit ball: Gaussian direction, radius U^{1/d}.
inline Vec uniform_in_unit_ball(int dim, CounterRng& rng) {
  Vec g(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) g[i] = rng.normal();
    norm = g.norm();
  } while (norm == 0.0);
  const double radius = std::pow(rng.uniform(), 1.0 / dim);
  return g * (radius / norm);
}

/// Draws n points uniformly from the ellipsoid volume. Point i uses the
/// stream (seed, stream, i), so any subset can be regenerated independently.
inline std::vector<Vec> sample_uniform(const Ellipsoid& e, std::size_t n,
                                       std::uint64_t seed, std::uint64_t stream = 0) {
  require(n >= 1, "sample count must be at least 1");
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, stream, i);
    out.push_back(e.from_unit_ball(uniform_in_unit_ball(e.dim(), rng)));
  }
  return out;
}

}  // namespace finv
