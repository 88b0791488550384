#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>

#include "finv/linalg.hpp"

namespace finv::ode {

using VectorField = std::function<Vec(const Vec&)>;

/// One Dormand–Prince 5(4) step with its error estimate and the coefficients
/// of the fourth-order continuous extension (Hairer's DOPRI5 dense output).
struct DopriStep {
  double t0 = 0.0;
  double h = 0.0;
  Vec y0, y1, error;
  std::array<Vec, 5> dense;
  Vec k_last;  // f(y1), reused as the first stage of the next step

  Vec interpolate(double t) const {
    const double s = (t - t0) / h;
    const double s1 = 1.0 - s;
    return dense[0] +
           s * (dense[1] + s1 * (dense[2] + s * (dense[3] + s1 * dense[4])));
  }
};

inline DopriStep dopri_step(const VectorField& f, double t0, const Vec& y0,
                            const Vec& k1, double h) {
  constexpr double a21 = 1.0 / 5.0;
  constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                   a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                   a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                   b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                   e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
  constexpr double d1 = -12715105075.0 / 11282082432.0,
                   d3 = 87487479700.0 / 32700410799.0,
                   d4 = -10690763975.0 / 1880347072.0,
                   d5 = 701980252875.0 / 199316789632.0,
                   d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

  const Vec k2 = f(y0 + h * (a21 * k1));
  const Vec k3 = f(y0 + h * (a31 * k1 + a32 * k2));
  const Vec k4 = f(y0 + h * (a41 * k1 + a42 * k2 + a43 * k3));
  const Vec k5 = f(y0 + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
  const Vec k6 = f(y0 + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
  Vec y1 = y0 + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  Vec k7 = f(y1);

  DopriStep s;
  s.t0 = t0;
  s.h = h;
  s.y0 = y0;
  s.error = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  const Vec ydiff = y1 - y0;
  const Vec bspl = h * k1 - ydiff;
  s.dense[0] = y0;
  s.dense[1] = ydiff;
  s.dense[2] = bspl;
  s.dense[3] = ydiff - h * k7 - bspl;
  s.dense[4] = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
  s.y1 = std::move(y1);
  s.k_last = std::move(k7);
  return s;
}

/// Scaled RMS error norm used by the step-size controller.
inline double error_norm(const DopriStep& s, double rel_tol, double abs_tol) {
  const Eigen::Index n = s.y0.size();
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale =
        abs_tol + rel_tol * std::max(std::abs(s.y0[i]), std::abs(s.y1[i]));
    const double r = s.error[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

/// Brent's method for a bracketed root of g on [a, b]; stops when
/// |g| ≤ ftol or the bracket is below machine resolution.
template <class Fn>
double brent_root(Fn&& g, double a, double b, double fa, double fb, double ftol,
                  int max_iter = 200) {
  if (std::abs(fa) <= ftol) return a;
  if (std::abs(fb) <= ftol) return b;
  double c = a, fc = fa, d = b - a, e = d;
  for (int i = 0; i < max_iter; ++i) {
    if ((fb > 0) == (fc > 0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b);
    const double m = 0.5 * (c - b);
    if (std::abs(fb) <= ftol || std::abs(m) <= tol) return b;
    if (std::abs(e) >= tol && std::abs(fa) > std::abs(fb)) {
      double p, q;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc, r = fb / fc;
        p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0) q = -q;
      p = std::abs(p);
      if (2.0 * p < std::min(3.0 * m * q - std::abs(tol * q), std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = m;
        e = d;
      }
    } else {
      d = m;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol ? d : (m > 0 ? tol : -tol);
    fb = g(b);
  }
  return b;
}

}  // namespace finv::ode
