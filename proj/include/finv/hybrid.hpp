#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "finv/ellipsoid.hpp"
#include "finv/linalg.hpp"
#include "finv/ode.hpp"

namespace finv {

/// Failure to evaluate the return map for one input. The invariant-set search
/// counts these as containment violations.
class MapEvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The flow ran for max_flow_time without an admissible guard crossing.
class GuardNotReached : public MapEvaluationError {
 public:
  using MapEvaluationError::MapEvaluationError;
};

/// An admissible crossing occurred before t_min (grazing or degenerate contact).
class ImmediateReimpact : public MapEvaluationError {
 public:
  using MapEvaluationError::MapEvaluationError;
};

/// The adaptive step collapsed or the state stopped being finite.
class IntegrationFailure : public MapEvaluationError {
 public:
  using MapEvaluationError::MapEvaluationError;
};

class NoConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnstableLinearization : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-guard hybrid system: flow ẋ = f(x) on {h ≥ 0}, reset Δ on the
/// transversal crossings of {h = 0}, and a chart for the guard.
struct HybridSystem {
  int state_dim = 0;
  std::function<Vec(const Vec&)> vector_field;
  std::function<double(const Vec&)> guard;
  /// ḣ(x) = ∇h(x)·f(x).
  std::function<double(const Vec&)> guard_rate;
  std::function<Vec(const Vec&)> reset;
  /// Guard point (state_dim) → reduced coordinates (state_dim − 1).
  std::function<Vec(const Vec&)> to_chart;
  /// Reduced coordinates → guard point; must land on h = 0.
  std::function<Vec(const Vec&)> from_chart;
  /// Optional filter on located crossings, e.g. to ignore foot scuffing.
  std::function<bool(const Vec&)> crossing_admissible;
};

struct IntegrationOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-11;
  double guard_tol = 1e-10;
  double t_min = 1e-6;
  double max_flow_time = 10.0;
  double initial_step = 1e-3;
  double max_step = std::numeric_limits<double>::infinity();
};

struct GuardHit {
  Vec state;
  double time = 0.0;
};

namespace detail {

inline std::pair<Vec, double> polish_crossing(const HybridSystem& sys,
                                              const ode::DopriStep& step, const Vec& k1,
                                              double t_root, double guard_tol) {
  // Newton on h along the true flow: re-take the step from its start with
  // the shortened length instead of trusting the interpolant.
  double t = t_root;
  for (int i = 0; i < 6; ++i) {
    const double h = t - step.t0;
    Vec x = h > 0.0 ? ode::dopri_step(sys.vector_field, step.t0, step.y0, k1, h).y1
                    : step.y0;
    const double g = sys.guard(x);
    if (std::abs(g) < guard_tol) return {std::move(x), t};
    const double rate = sys.guard_rate(x);
    if (!(rate < 0.0) || !std::isfinite(rate)) break;
    t -= g / rate;
    if (t < step.t0 || t > step.t0 + step.h) break;
  }
  return {step.interpolate(t_root), t_root};
}

}  // namespace detail

/// Flows from x_plus until the first admissible transversal crossing of the
/// guard. Crossings are detected as a sign change of h over an accepted
/// step, located by Brent's method on the dense output, then polished on
/// the true flow to |h| < guard_tol.
inline GuardHit integrate_to_guard(const HybridSystem& sys, const Vec& x_plus,
                                   const IntegrationOptions& opt = {}) {
  require(x_plus.size() == sys.state_dim, "initial state has the wrong dimension");
  const auto& f = sys.vector_field;
  double t = 0.0;
  Vec y = x_plus;
  Vec k1 = f(y);
  double g_prev = sys.guard(y);
  double h = std::min({opt.initial_step, opt.max_step, opt.max_flow_time});
  const double h_min = 1e-14;

  while (t < opt.max_flow_time) {
    h = std::min(h, opt.max_flow_time - t);
    ode::DopriStep step = ode::dopri_step(f, t, y, k1, h);
    const double err = ode::error_norm(step, opt.rel_tol, opt.abs_tol);
    if (!std::isfinite(err) || !step.y1.allFinite()) {
      h *= 0.25;
      if (h < h_min) throw IntegrationFailure("state became non-finite during flow");
      continue;
    }
    const double factor =
        err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
    if (err > 1.0) {
      h *= std::max(factor, 0.1);
      if (h < h_min) throw IntegrationFailure("step size underflow");
      continue;
    }

    const double t1 = t + h;
    const double g1 = sys.guard(step.y1);
    if (g_prev >= 0.0 && g1 < 0.0) {
      auto g_of_t = [&](double s) { return sys.guard(step.interpolate(s)); };
      const double t_root =
          ode::brent_root(g_of_t, t, t1, g_prev, g1, 0.1 * opt.guard_tol);
      auto [x_root, t_hit] = detail::polish_crossing(sys, step, k1, t_root, opt.guard_tol);
      const bool admissible = !sys.crossing_admissible || sys.crossing_admissible(x_root);
      const bool transversal = sys.guard_rate(x_root) < 0.0;
      if (admissible && transversal) {
        if (t_hit < opt.t_min)
          throw ImmediateReimpact("guard crossing at t = " + std::to_string(t_hit) +
                                  " < t_min");
        return GuardHit{std::move(x_root), t_hit};
      }
    }

    t = t1;
    y = std::move(step.y1);
    k1 = std::move(step.k_last);
    g_prev = g1;
    h = std::min(h * factor, opt.max_step);
  }
  throw GuardNotReached("no admissible guard crossing within max_flow_time = " +
                        std::to_string(opt.max_flow_time));
}

/// One application of the return map in chart coordinates:
/// chart(φ_T(Δ(chart⁻¹(y)))).
inline Vec poincare_step(const HybridSystem& sys, const Vec& y,
                         const IntegrationOptions& opt = {}) {
  require(y.size() == sys.state_dim - 1, "reduced coordinates have the wrong dimension");
  const Vec x_minus = sys.from_chart(y);
  const GuardHit hit = integrate_to_guard(sys, sys.reset(x_minus), opt);
  return sys.to_chart(hit.state);
}

/// Black-box return map on reduced coordinates. Analytic maps and
/// simulation-backed maps share this type; evaluation is pure.
class PoincareMap {
 public:
  using Evaluator = std::function<Vec(const Vec&)>;

  PoincareMap(int reduced_dim, Evaluator eval)
      : dim_(reduced_dim), eval_(std::move(eval)) {
    require(dim_ >= 1, "map dimension must be positive");
    require(static_cast<bool>(eval_), "map evaluator is empty");
  }

  static PoincareMap from_hybrid(HybridSystem sys, IntegrationOptions opt = {}) {
    const int dim = sys.state_dim - 1;
    return PoincareMap(dim, [sys = std::move(sys), opt](const Vec& y) {
      return poincare_step(sys, y, opt);
    });
  }

  int dim() const { return dim_; }

  Vec operator()(const Vec& y) const {
    require(y.size() == dim_, "map input has the wrong dimension");
    return eval_(y);
  }

  /// k-fold composition.
  Vec iterate(const Vec& y, int k) const {
    Vec out = y;
    for (int i = 0; i < k; ++i) out = (*this)(out);
    return out;
  }

 private:
  int dim_;
  Evaluator eval_;
};

struct JacobianEstimate {
  Mat forward;
  Mat central;
  /// max |forward − central| / max(1, max |central|).
  double discrepancy = 0.0;
  bool consistent() const { return discrepancy <= 1e-3; }
};

inline double default_fd_step(const Vec& y) { return 1e-6 * std::max(1.0, y.norm()); }

/// Forward-difference Jacobian, with a central-difference companion for
/// error control.
inline JacobianEstimate fd_jacobian(const PoincareMap& map, const Vec& y_star, double eps) {
  require(eps > 0.0, "finite-difference step must be positive");
  const int n = map.dim();
  const Vec base = map(y_star);
  JacobianEstimate out{Mat(base.size(), n), Mat(base.size(), n), 0.0};
  for (int j = 0; j < n; ++j) {
    Vec yp = y_star, ym = y_star;
    yp[j] += eps;
    ym[j] -= eps;
    const Vec fp = map(yp);
    const Vec fm = map(ym);
    out.forward.col(j) = (fp - base) / eps;
    out.central.col(j) = (fp - fm) / (2.0 * eps);
  }
  const double scale = std::max(1.0, out.central.cwiseAbs().maxCoeff());
  out.discrepancy = (out.forward - out.central).cwiseAbs().maxCoeff() / scale;
  return out;
}

inline JacobianEstimate fd_jacobian(const PoincareMap& map, const Vec& y_star) {
  return fd_jacobian(map, y_star, default_fd_step(y_star));
}

struct FixedPointOptions {
  double tol = 1e-10;
  int max_iterations = 200;
};

struct FixedPointResult {
  Vec point;
  double residual = 0.0;
  int iterations = 0;
};

/// Newton iteration on g(y) = P(y) − y with a finite-difference Jacobian and
/// a backtracking safeguard; falls back to damped fixed-point steps when a
/// Newton direction fails to reduce the residual.
inline FixedPointResult find_fixed_point(const PoincareMap& map, const Vec& y0,
                                         const FixedPointOptions& opt = {}) {
  require(y0.size() == map.dim(), "initial guess has the wrong dimension");
  const int n = map.dim();
  Vec y = y0;
  Vec g = map(y) - y;
  double res = g.norm();
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (res < opt.tol) return {y, res, it};
    const double eps = std::max(1e-7, std::min(1e-4, 1e-3 * res)) * std::max(1.0, y.norm());
    Mat jac(n, n);
    for (int j = 0; j < n; ++j) {
      Vec yp = y;
      yp[j] += eps;
      jac.col(j) = ((map(yp) - yp) - g) / eps;
    }
    const Vec dir = jac.fullPivLu().solve(-g);
    bool improved = false;
    if (dir.allFinite()) {
      double lambda = 1.0;
      for (int k = 0; k < 12; ++k, lambda *= 0.5) {
        const Vec cand = y + lambda * dir;
        try {
          const Vec gc = map(cand) - cand;
          if (gc.allFinite() && gc.norm() < res) {
            y = cand;
            g = gc;
            res = gc.norm();
            improved = true;
            break;
          }
        } catch (const MapEvaluationError&) {
        }
      }
    }
    if (!improved) {
      const Vec cand = y + 0.5 * g;
      const Vec gc = map(cand) - cand;
      if (!(gc.norm() < res)) {
        if (res < opt.tol) return {y, res, it};
        throw NoConvergence("fixed-point search stalled at residual " +
                            std::to_string(res));
      }
      y = cand;
      g = gc;
      res = gc.norm();
    }
  }
  if (res < opt.tol) return {y, res, opt.max_iterations};
  throw NoConvergence("fixed-point search did not converge; residual " +
                      std::to_string(res));
}

struct ContractionMetric {
  Mat metric;              // P with λ_min(P) = 1
  double spectral_radius;  // b
  double rate;             // contraction rate certified by P: JᵀPJ ⪯ rate²·P
  bool from_eigenbasis;
};

/// Metric P ⪰ I with JᵀPJ ⪯ ρ²P for the linearization J.
///
/// When J has a well-conditioned real (block) eigenbasis V, P = V⁻ᵀV⁻¹
/// attains ρ = spectral radius. Otherwise the Stein equation
/// JᵀPJ − b̃²P = −I with b̃ = b + 0.01(1 − b) gives a feasible P at rate b̃.
inline ContractionMetric contraction_metric(const Mat& jac) {
  require(jac.rows() == jac.cols() && jac.rows() > 0, "Jacobian must be square");
  const Eigen::Index n = jac.rows();
  const double b = linalg::spectral_radius(jac);
  if (!(b < 1.0))
    throw UnstableLinearization("spectral radius " + std::to_string(b) +
                                " >= 1; the fixed point is not asymptotically stable");

  auto normalize = [](Mat p) {
    p = linalg::symmetrized(p);
    return Mat(p / linalg::min_eigenvalue(p));
  };

  Eigen::EigenSolver<Mat> es(jac);
  const Eigen::VectorXcd lam = es.eigenvalues();
  const Eigen::MatrixXcd vec = es.eigenvectors();
  Mat basis(n, n);
  for (Eigen::Index i = 0; i < n;) {
    if (std::abs(lam[i].imag()) <= 1e-12 * std::max(1.0, std::abs(lam[i]))) {
      basis.col(i) = vec.col(i).real().normalized();
      ++i;
    } else if (i + 1 < n) {
      basis.col(i) = vec.col(i).real();
      basis.col(i + 1) = vec.col(i).imag();
      const double s = std::max(basis.col(i).norm(), basis.col(i + 1).norm());
      basis.col(i) /= s;
      basis.col(i + 1) /= s;
      i += 2;
    } else {
      basis.col(i).setZero();
      ++i;
    }
  }
  Eigen::JacobiSVD<Mat> svd(basis);
  const Vec sv = svd.singularValues();
  if (sv.minCoeff() > 1e-6 * sv.maxCoeff()) {
    const Mat v_inv = basis.inverse();
    Mat p = normalize(v_inv.transpose() * v_inv);
    const Mat gap = b * b * p - jac.transpose() * p * jac;
    if (linalg::min_eigenvalue(gap) >= -1e-9 * p.norm()) return {p, b, b, true};
  }
  const double rate = b + 0.01 * (1.0 - b);
  Mat p = normalize(linalg::solve_scaled_stein(jac, rate * rate, Mat::Identity(n, n)));
  return {p, b, rate, false};
}

/// Initial ellipsoid {y : (y − y*)ᵀP(y − y*) ≤ r²} from the contraction metric
/// of the linearized return map at its fixed point.
inline Ellipsoid contraction_init(const Mat& jac, double r, const Vec& fixed_point) {
  require(r > 1.0, "contraction scale r must exceed 1");
  require(fixed_point.size() == jac.rows(), "fixed point dimension mismatch");
  const ContractionMetric cm = contraction_metric(jac);
  return Ellipsoid::from_center_metric(fixed_point, cm.metric / (r * r));
}

}  // namespace finv
