#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "finv/algorithm.hpp"
#include "finv/ellipsoid.hpp"
#include "finv/rng.hpp"

namespace finv {

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Default threshold: a single basis function then describes the σ-ball.
inline const double kDefaultRbfGamma = std::exp(-0.5);
inline constexpr double kMinRbfWidth = 1e-6;

struct Box {
  Vec lower, upper;
  double volume() const { return (upper - lower).prod(); }
};

/// Superlevel set {x : Σᵢ exp(−½||x − μᵢ||²/σᵢ²) ≥ γ} of isotropic Gaussians.
class RbfSet {
 public:
  RbfSet(std::vector<Vec> centers, std::vector<double> widths, double gamma)
      : centers_(std::move(centers)), widths_(std::move(widths)), gamma_(gamma) {
    require(!centers_.empty(), "rbf set needs at least one basis function");
    require(centers_.size() == widths_.size(), "rbf centers and widths differ in count");
    for (const auto& c : centers_)
      require(c.size() == centers_.front().size() && c.allFinite(),
              "rbf centers must share one finite dimension");
    for (double w : widths_) require(w > 0.0 && std::isfinite(w), "rbf widths must be positive");
    require(gamma_ > 0.0 && gamma_ < static_cast<double>(centers_.size()),
            "rbf threshold must lie in (0, m)");
    volume_ = estimate_volume();
  }

  int dim() const { return static_cast<int>(centers_.front().size()); }
  std::size_t size() const { return centers_.size(); }
  const std::vector<Vec>& centers() const { return centers_; }
  const std::vector<double>& widths() const { return widths_; }
  double gamma() const { return gamma_; }

  double value(const Vec& x) const {
    require(x.size() == dim(), "point dimension does not match rbf set");
    double v = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      v += std::exp(-0.5 * (x - centers_[i]).squaredNorm() / (widths_[i] * widths_[i]));
    return v;
  }

  bool contains(const Vec& x) const { return value(x) >= gamma_; }

  /// Axis-aligned box around centers ± coverage·σ. The coverage is raised to
  /// the radius beyond which no single term can reach γ/m, so the box always
  /// encloses the set.
  Box bounding_box(double coverage = 4.0) const {
    const double reach = std::sqrt(2.0 * std::log(static_cast<double>(size()) / gamma_));
    const double k = std::max(coverage, reach);
    Box box{centers_.front(), centers_.front()};
    for (std::size_t i = 0; i < size(); ++i) {
      box.lower = box.lower.cwiseMin((centers_[i].array() - k * widths_[i]).matrix());
      box.upper = box.upper.cwiseMax((centers_[i].array() + k * widths_[i]).matrix());
    }
    return box;
  }

  /// Monte-Carlo volume from a fixed probe stream; deterministic.
  double volume() const { return volume_; }

 private:
  double estimate_volume() const {
    constexpr std::size_t kProbes = 40000;
    const Box box = bounding_box();
    std::size_t hits = 0;
    Vec x(dim());
    for (std::size_t i = 0; i < kProbes; ++i) {
      CounterRng rng(0x7f4a7c15u, 0, i);
      for (int d = 0; d < dim(); ++d) x[d] = rng.uniform(box.lower[d], box.upper[d]);
      hits += contains(x) ? 1 : 0;
    }
    return box.volume() * static_cast<double>(hits) / static_cast<double>(kProbes);
  }

  std::vector<Vec> centers_;
  std::vector<double> widths_;
  double gamma_;
  double volume_ = 0.0;
};

/// Rejection sampling from the bounding box; point i owns stream
/// (seed, stream, i). Fails when the acceptance rate drops below 1e-4.
inline std::vector<Vec> sample_uniform(const RbfSet& set, std::size_t n, std::uint64_t seed,
                                       std::uint64_t stream = 0, double coverage = 4.0) {
  require(n >= 1, "sample count must be at least 1");
  constexpr double kMinAcceptance = 1e-4;
  constexpr std::uint64_t kMaxDrawsPerSample = 1000000;
  const Box box = set.bounding_box(coverage);
  std::vector<Vec> out;
  out.reserve(n);
  std::uint64_t draws = 0;
  Vec x(set.dim());
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, stream, i);
    for (std::uint64_t k = 0;; ++k) {
      if (k == kMaxDrawsPerSample)
        throw SamplingError("rbf rejection sampling stalled; tighten the bounding box");
      ++draws;
      for (int d = 0; d < set.dim(); ++d) x[d] = rng.uniform(box.lower[d], box.upper[d]);
      if (set.contains(x)) break;
    }
    out.push_back(x);
  }
  const double rate = static_cast<double>(n) / static_cast<double>(draws);
  if (rate < kMinAcceptance)
    throw SamplingError("rbf rejection sampling acceptance rate " + std::to_string(rate) +
                        " below 1e-4; tighten the bounding box");
  return out;
}

struct RbfFitOptions {
  double gamma = kDefaultRbfGamma;
  int penalty_rounds = 5;
  double penalty_start = 10.0;
  double penalty_growth = 10.0;
  int max_steps_per_round = 400;
  int lloyd_iterations = 20;
};

struct RbfFit {
  RbfSet set;
  bool feasible = false;
  /// min_j (value(u_j) − γ) over the training points.
  double min_residual = 0.0;
  double objective = 0.0;
  /// Penalized objective after each accepted descent step of each round.
  std::vector<std::vector<double>> trace;
};

namespace detail {

/// Farthest-point seeding followed by Lloyd iterations. Widths are the
/// cluster radii scaled so every member clears γ on its own Gaussian.
inline std::pair<std::vector<Vec>, std::vector<double>> seed_rbf(
    const std::vector<Vec>& pts, std::size_t m, double gamma, int lloyd_iterations) {
  Vec centroid = Vec::Zero(pts.front().size());
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());

  std::vector<Vec> centers;
  auto farthest_from_set = [&](const std::vector<Vec>& from) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& c : from) d = std::min(d, (pts[j] - c).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = j;
      }
    }
    return best;
  };
  centers.push_back(pts[farthest_from_set({centroid})]);
  while (centers.size() < m) centers.push_back(pts[farthest_from_set(centers)]);

  std::vector<std::size_t> label(pts.size(), 0);
  auto assign = [&] {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        const double d = (pts[j] - centers[i]).squaredNorm();
        if (d < best) {
          best = d;
          label[j] = i;
        }
      }
    }
  };
  for (int it = 0; it < lloyd_iterations; ++it) {
    assign();
    std::vector<Vec> sum(m, Vec::Zero(centroid.size()));
    std::vector<std::size_t> count(m, 0);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      sum[label[j]] += pts[j];
      ++count[label[j]];
    }
    for (std::size_t i = 0; i < m; ++i)
      if (count[i] > 0) centers[i] = sum[i] / static_cast<double>(count[i]);
  }
  assign();

  const double per_radius = gamma < 1.0 ? 1.0 / std::sqrt(2.0 * std::log(1.0 / gamma)) : 1.0;
  std::vector<double> widths(m, kMinRbfWidth);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const double r = (pts[j] - centers[label[j]]).norm() * per_radius;
    widths[label[j]] = std::max(widths[label[j]], r);
  }
  return {centers, widths};
}

struct RbfObjective {
  const std::vector<Vec>& pts;
  std::size_t m;
  int dim;
  double gamma;
  double rho;

  // Parameter layout: [μ₁ … μ_m, σ₁ … σ_m].
  double value(const Vec& th, Vec* grad) const {
    const Eigen::Index sig = static_cast<Eigen::Index>(m) * dim;
    double f = 0.0;
    for (std::size_t i = 0; i < m; ++i) f += th[sig + i] * th[sig + i];
    if (grad) {
      grad->setZero(th.size());
      for (std::size_t i = 0; i < m; ++i) (*grad)[sig + i] = 2.0 * th[sig + i];
    }
    std::vector<double> phi(m), d2(m);
    for (const auto& u : pts) {
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double s = th[sig + i];
        d2[i] = (u - th.segment(static_cast<Eigen::Index>(i) * dim, dim)).squaredNorm();
        phi[i] = std::exp(-0.5 * d2[i] / (s * s));
        v += phi[i];
      }
      const double hinge = gamma - v;
      if (hinge <= 0.0) continue;
      f += rho * hinge * hinge;
      if (!grad) continue;
      for (std::size_t i = 0; i < m; ++i) {
        const double s = th[sig + i];
        const double coef = -2.0 * rho * hinge * phi[i];
        const auto off = static_cast<Eigen::Index>(i) * dim;
        grad->segment(off, dim) +=
            coef * (u - th.segment(off, dim)) / (s * s);
        (*grad)[sig + i] += coef * d2[i] / (s * s * s);
      }
    }
    return f;
  }
};

inline double min_residual(const RbfSet& set, const std::vector<Vec>& pts) {
  double r = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) r = std::min(r, set.value(p) - set.gamma());
  return r;
}

}  // namespace detail

/// Fits m Gaussians minimizing Σσᵢ² subject to every training point being a
/// member. Quadratic penalty on the constraint hinge, gradient descent with
/// backtracking inside each penalty round, then a uniform width inflation
/// that restores exact feasibility. Local optimum only.
inline RbfFit fit_rbf(const std::vector<Vec>& pts, std::size_t m,
                      const std::optional<RbfSet>& init = std::nullopt,
                      const RbfFitOptions& opt = {}) {
  require(!pts.empty(), "fit_rbf needs at least one point");
  require(m >= 1, "fit_rbf needs at least one basis function");
  require(opt.gamma > 0.0 && opt.gamma < static_cast<double>(m),
          "rbf threshold must lie in (0, m)");
  const int dim = static_cast<int>(pts.front().size());
  const Eigen::Index sig = static_cast<Eigen::Index>(m) * dim;

  std::vector<Vec> centers;
  std::vector<double> widths;
  if (init && init->size() == m && init->dim() == dim) {
    centers = init->centers();
    widths = init->widths();
  } else {
    std::tie(centers, widths) = detail::seed_rbf(pts, m, opt.gamma, opt.lloyd_iterations);
  }
  Vec th(sig + static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    th.segment(static_cast<Eigen::Index>(i) * dim, dim) = centers[i];
    th[sig + i] = std::max(widths[i], kMinRbfWidth);
  }

  std::vector<std::vector<double>> trace;
  double rho = opt.penalty_start;
  for (int round = 0; round < opt.penalty_rounds; ++round, rho *= opt.penalty_growth) {
    const detail::RbfObjective obj{pts, m, dim, opt.gamma, rho / static_cast<double>(pts.size())};
    std::vector<double> round_trace;
    Vec grad;
    double f = obj.value(th, &grad);
    round_trace.push_back(f);
    double step = 1e-2;
    for (int k = 0; k < opt.max_steps_per_round; ++k) {
      const double g2 = grad.squaredNorm();
      if (g2 < 1e-24) break;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
        Vec cand = th - step * grad;
        for (std::size_t i = 0; i < m; ++i)
          cand[sig + i] = std::max(cand[sig + i], kMinRbfWidth);
        const double fc = obj.value(cand, nullptr);
        if (fc <= f - 1e-4 * (th - cand).dot(grad)) {
          const double rel = (f - fc) / std::max(std::abs(f), 1e-300);
          th = std::move(cand);
          f = obj.value(th, &grad);
          round_trace.push_back(f);
          accepted = true;
          step *= 2.0;
          if (rel < 1e-12) k = opt.max_steps_per_round;
          break;
        }
      }
      if (!accepted) break;
    }
    trace.push_back(std::move(round_trace));
  }

  auto build = [&](double inflate) {
    std::vector<Vec> c(m);
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) {
      c[i] = th.segment(static_cast<Eigen::Index>(i) * dim, dim);
      w[i] = std::max(th[sig + i], kMinRbfWidth) * inflate;
    }
    return RbfSet(std::move(c), std::move(w), opt.gamma);
  };

  // Every Gaussian term grows with its width, so inflating all widths by a
  // common factor raises every membership value monotonically.
  auto residual_at = [&](double s) {
    double r = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double w = std::max(th[sig + i], kMinRbfWidth) * s;
        v += std::exp(-0.5 * (p - th.segment(static_cast<Eigen::Index>(i) * dim, dim)).squaredNorm() /
                      (w * w));
      }
      r = std::min(r, v - opt.gamma);
    }
    return r;
  };
  double inflate = 1.0;
  if (residual_at(1.0) < 0.0) {
    double hi = 2.0;
    while (residual_at(hi) < 0.0 && hi < 1e12) hi *= 2.0;
    double lo = hi / 2.0 < 1.0 ? 1.0 : hi / 2.0;
    if (residual_at(lo) >= 0.0) hi = lo;
    for (int i = 0; i < 100 && hi - lo > 1e-12 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      (residual_at(mid) >= 0.0 ? hi : lo) = mid;
    }
    inflate = hi;
  }
  RbfSet set = build(inflate);
  const double res = detail::min_residual(set, pts);
  double objective = 0.0;
  for (double w : set.widths()) objective += w * w;
  return RbfFit{std::move(set), res >= -1e-6, res, objective, std::move(trace)};
}

/// Candidate set for the search loop when refits use RBF sets: the initial
/// ellipsoid, then RBF sets.
class CandidateRegion {
 public:
  CandidateRegion(Ellipsoid e) : v_(std::move(e)) {}
  CandidateRegion(RbfSet s) : v_(std::move(s)) {}

  int dim() const {
    return std::visit([](const auto& s) { return s.dim(); }, v_);
  }
  bool contains(const Vec& x) const {
    return std::visit([&](const auto& s) { return s.contains(x); }, v_);
  }
  double volume() const {
    return std::visit([](const auto& s) { return s.volume(); }, v_);
  }
  const Ellipsoid* ellipsoid() const { return std::get_if<Ellipsoid>(&v_); }
  const RbfSet* rbf() const { return std::get_if<RbfSet>(&v_); }

 private:
  std::variant<Ellipsoid, RbfSet> v_;
};

inline std::vector<Vec> sample_uniform(const CandidateRegion& r, std::size_t n,
                                       std::uint64_t seed, std::uint64_t stream = 0) {
  if (const auto* e = r.ellipsoid()) return sample_uniform(*e, n, seed, stream);
  return sample_uniform(*r.rbf(), n, seed, stream);
}

struct RbfRunOptions {
  std::size_t basis_count = 2;
  RbfFitOptions fit;
  /// Seed each refit from the previous RBF set instead of re-clustering.
  bool warm_start = false;
};

/// The search loop with RBF refits in place of the ellipsoid refit.
inline RunResult<CandidateRegion> run_rbf(const PoincareMap& map, const Ellipsoid& initial,
                                          const RbfRunOptions& rbf_opt,
                                          const RunOptions& opt) {
  auto refit = [&rbf_opt](const std::vector<Vec>& inliers, const CandidateRegion& current) {
    std::optional<RbfSet> init;
    if (rbf_opt.warm_start && current.rbf()) init = *current.rbf();
    return CandidateRegion(fit_rbf(inliers, rbf_opt.basis_count, init, rbf_opt.fit).set);
  };
  return run_search(map, CandidateRegion(initial), refit, rbf_opt.basis_count, opt);
}

}  // namespace finv
