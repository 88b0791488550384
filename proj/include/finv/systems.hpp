#pragma once

#include <cmath>
#include <numbers>

#include "finv/hybrid.hpp"

namespace finv::systems {

// ---------------------------------------------------------------------------
// Convex expander-contractor: radial scaling about c by the M-norm, so the
// unit M-ball is invariant, its interior contracts and its exterior expands.

struct CecParams {
  Vec c = Vec::Ones(2);
  Mat metric = (Mat(2, 2) << 2.0, 1.0, 1.0, 1.0).finished();

  void validate() const {
    require(c.size() == metric.rows() && metric.rows() == metric.cols(),
            "cec: c and M dimensions disagree");
    require(linalg::symmetry_residual(metric) < 1e-12, "cec: M must be symmetric");
    require(linalg::min_eigenvalue(metric) >= 0.0, "cec: M must be positive semidefinite");
  }
};

inline Vec cec_map(const Vec& x, const CecParams& p) {
  const Vec d = x - p.c;
  return d * std::sqrt(std::max(0.0, d.dot(p.metric * d))) + p.c;
}

inline PoincareMap cec_poincare(CecParams p) {
  p.validate();
  const int dim = static_cast<int>(p.c.size());
  return PoincareMap(dim, [p = std::move(p)](const Vec& x) { return cec_map(x, p); });
}

/// The true invariant set {(x − c)ᵀM(x − c) ≤ 1}.
inline Ellipsoid cec_true_set(const CecParams& p) {
  return Ellipsoid::from_center_metric(p.c, p.metric);
}

// ---------------------------------------------------------------------------
// Nonconvex expander-contractor: halves the distance to c₁ or c₂ inside the
// open discs of radius r around them, scales by κ elsewhere.

struct NecParams {
  Vec c1 = (Vec(2) << -0.6, 0.0).finished();
  Vec c2 = (Vec(2) << 0.6, 0.0).finished();
  double r = 0.6;
  double kappa = 1.3;

  void validate() const {
    require(c1.size() == c2.size(), "nec: c1 and c2 dimensions disagree");
    require(r > 0.0, "nec: r must be positive");
    require(kappa > 1.0, "nec: kappa must exceed 1");
    require((c1 - c2).norm() > 0.0, "nec: c1 and c2 must differ");
  }
};

inline Vec nec_map(const Vec& x, const NecParams& p) {
  if ((x - p.c1).norm() < p.r) return 0.5 * (x + p.c1);
  if ((x - p.c2).norm() < p.r) return 0.5 * (x + p.c2);
  return p.kappa * x;
}

inline PoincareMap nec_poincare(NecParams p) {
  p.validate();
  const int dim = static_cast<int>(p.c1.size());
  return PoincareMap(dim, [p = std::move(p)](const Vec& x) { return nec_map(x, p); });
}

/// Membership in the true invariant set, the union of the two closed discs.
inline bool nec_true_set_contains(const Vec& x, const NecParams& p) {
  return (x - p.c1).norm() <= p.r || (x - p.c2).norm() <= p.r;
}

inline double nec_true_set_volume(const NecParams& p) {
  return 2.0 * unit_ball_volume(static_cast<int>(p.c1.size())) *
         std::pow(p.r, static_cast<double>(p.c1.size()));
}

// ---------------------------------------------------------------------------
// Passive compass-gait walker on a downhill slope.
//
// State x = [θ_sw, θ_st, θ̇_sw, θ̇_st], leg angles from the vertical with the
// walker moving toward +x down a slope of angle γ. Each leg carries a point
// mass m at distance a from the foot (b from the hip); the hip carries m_h.
// Dynamics H(q)q̈ + C(q, q̇)q̇ + G(q) = 0; impact Q⁺q̇⁺ = Q⁻q̇⁻ with the legs
// exchanging roles.

struct CompassGaitParams {
  double m = 5.0;
  double m_h = 10.0;
  double a = 0.5;
  double b = 0.5;
  double g = 9.81;
  double slope = 3.0 * std::numbers::pi / 180.0;
  /// Crossings with inter-leg angle θ_st − θ_sw below this are scuffing.
  double min_leg_separation = 0.05;

  double leg_length() const { return a + b; }

  void validate() const {
    require(m > 0 && m_h > 0 && a > 0 && b > 0 && g > 0,
            "compass_gait: masses, lengths and gravity must be positive");
    require(slope > 0 && slope < std::numbers::pi / 2,
            "compass_gait: slope must lie in (0, pi/2)");
    require(min_leg_separation >= 0, "compass_gait: min_leg_separation must be >= 0");
  }
};

namespace compass_gait {

inline Mat mass_matrix(const CompassGaitParams& p, double th_sw, double th_st) {
  const double l = p.leg_length();
  const double c = std::cos(th_st - th_sw);
  Mat h(2, 2);
  h << p.m * p.b * p.b, -p.m * l * p.b * c, -p.m * l * p.b * c,
      (p.m_h + p.m) * l * l + p.m * p.a * p.a;
  return h;
}

inline Mat coriolis(const CompassGaitParams& p, double th_sw, double th_st, double dth_sw,
                    double dth_st) {
  const double l = p.leg_length();
  const double s = std::sin(th_st - th_sw);
  Mat c(2, 2);
  c << 0.0, p.m * l * p.b * s * dth_st, -p.m * l * p.b * s * dth_sw, 0.0;
  return c;
}

inline Vec gravity(const CompassGaitParams& p, double th_sw, double th_st) {
  const double l = p.leg_length();
  Vec g(2);
  g << p.m * p.b * p.g * std::sin(th_sw),
      -(p.m_h * l + p.m * p.a + p.m * l) * p.g * std::sin(th_st);
  return g;
}

/// Pre-impact momentum map Q⁻(α), α = half the inter-leg angle.
inline Mat impact_pre(const CompassGaitParams& p, double alpha) {
  const double l = p.leg_length();
  const double c = std::cos(2.0 * alpha);
  Mat q(2, 2);
  q << -p.m * p.a * p.b, -p.m * p.a * p.b + (p.m_h * l * l + 2.0 * p.m * p.a * l) * c,
      0.0, -p.m * p.a * p.b;
  return q;
}

/// Post-impact momentum map Q⁺(α).
inline Mat impact_post(const CompassGaitParams& p, double alpha) {
  const double l = p.leg_length();
  const double c = std::cos(2.0 * alpha);
  Mat q(2, 2);
  q << p.m * p.b * (p.b - l * c), p.m * l * (l - p.b * c) + p.m * p.a * p.a + p.m_h * l * l,
      p.m * p.b * p.b, -p.m * p.b * l * c;
  return q;
}

inline Vec vector_field(const CompassGaitParams& p, const Vec& x) {
  const Mat h = mass_matrix(p, x[0], x[1]);
  const Vec qd = x.tail<2>();
  const Vec rhs = -coriolis(p, x[0], x[1], x[2], x[3]) * qd - gravity(p, x[0], x[1]);
  const Vec qdd = h.ldlt().solve(rhs);
  Vec dx(4);
  dx << qd, qdd;
  return dx;
}

/// Swing-foot height above the slope.
inline double foot_height(const CompassGaitParams& p, const Vec& x) {
  return p.leg_length() * (std::cos(x[1] - p.slope) - std::cos(x[0] - p.slope));
}

inline double foot_height_rate(const CompassGaitParams& p, const Vec& x) {
  return p.leg_length() *
         (-std::sin(x[1] - p.slope) * x[3] + std::sin(x[0] - p.slope) * x[2]);
}

inline Vec impact(const CompassGaitParams& p, const Vec& x) {
  const double alpha = 0.5 * (x[1] - x[0]);
  const Vec qd_post = impact_post(p, alpha).partialPivLu().solve(impact_pre(p, alpha) * x.tail<2>());
  Vec out(4);
  out << x[1], x[0], qd_post;
  return out;
}

inline double kinetic_energy(const CompassGaitParams& p, const Vec& x) {
  const Vec qd = x.tail<2>();
  return 0.5 * qd.dot(mass_matrix(p, x[0], x[1]) * qd);
}

/// Potential energy relative to the stance foot.
inline double potential_energy(const CompassGaitParams& p, const Vec& x) {
  const double l = p.leg_length();
  return p.g * ((p.m_h * l + p.m * p.a + p.m * l) * std::cos(x[1]) -
                p.m * p.b * std::cos(x[0]));
}

/// Guard chart: on heel strike θ_sw = 2γ − θ_st, so y = [θ_st, θ̇_sw, θ̇_st].
inline Vec to_chart(const Vec& x) { return (Vec(3) << x[1], x[2], x[3]).finished(); }

inline Vec from_chart(const CompassGaitParams& p, const Vec& y) {
  return (Vec(4) << 2.0 * p.slope - y[0], y[0], y[1], y[2]).finished();
}

/// Pre-impact state near the passive limit cycle of the default walker,
/// used to seed the fixed-point search.
inline Vec nominal_seed() { return (Vec(3) << 0.32, 1.8, 1.5).finished(); }

}  // namespace compass_gait

inline HybridSystem compass_gait_system(CompassGaitParams p) {
  p.validate();
  HybridSystem sys;
  sys.state_dim = 4;
  sys.vector_field = [p](const Vec& x) { return compass_gait::vector_field(p, x); };
  sys.guard = [p](const Vec& x) { return compass_gait::foot_height(p, x); };
  sys.guard_rate = [p](const Vec& x) { return compass_gait::foot_height_rate(p, x); };
  sys.reset = [p](const Vec& x) { return compass_gait::impact(p, x); };
  sys.to_chart = [](const Vec& x) { return compass_gait::to_chart(x); };
  sys.from_chart = [p](const Vec& y) { return compass_gait::from_chart(p, y); };
  sys.crossing_admissible = [p](const Vec& x) {
    return x[1] - x[0] > p.min_leg_separation;
  };
  return sys;
}

// ---------------------------------------------------------------------------

/// P(y) = y, every set is invariant.
inline PoincareMap identity_poincare(int dim) {
  return PoincareMap(dim, [](const Vec& y) { return y; });
}

}  // namespace finv::systems
