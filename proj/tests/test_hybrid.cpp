#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "finv/hybrid.hpp"
#include "finv/systems.hpp"

using namespace finv;
namespace cg = finv::systems::compass_gait;

namespace {

// ẍ = −x with guard h = x: from (1, 0) the first downward crossing is at π/2.
HybridSystem oscillator() {
  HybridSystem s;
  s.state_dim = 2;
  s.vector_field = [](const Vec& x) { return (Vec(2) << x[1], -x[0]).finished(); };
  s.guard = [](const Vec& x) { return x[0]; };
  s.guard_rate = [](const Vec& x) { return x[1]; };
  s.reset = [](const Vec& x) { return (Vec(2) << 1.0, 0.0 * x[1]).finished(); };
  s.to_chart = [](const Vec& x) { return (Vec(1) << x[1]).finished(); };
  s.from_chart = [](const Vec& y) { return (Vec(2) << 0.0, y[0]).finished(); };
  return s;
}

struct Kinematics {
  // stance-leg mass, hip, swing-leg mass; positions and velocities
  Eigen::Vector2d p[3], v[3];
};

// Independent forward kinematics with the stance foot at `foot`.
Kinematics kinematics(const systems::CompassGaitParams& p, const Vec& x,
                      const Eigen::Vector2d& foot) {
  const double l = p.a + p.b;
  auto dir = [](double th) { return Eigen::Vector2d(std::sin(th), std::cos(th)); };
  auto ddir = [](double th) { return Eigen::Vector2d(std::cos(th), -std::sin(th)); };
  Kinematics k;
  k.p[0] = foot + p.a * dir(x[1]);
  k.v[0] = p.a * x[3] * ddir(x[1]);
  k.p[1] = foot + l * dir(x[1]);
  k.v[1] = l * x[3] * ddir(x[1]);
  k.p[2] = k.p[1] - p.b * dir(x[0]);
  k.v[2] = k.v[1] - p.b * x[2] * ddir(x[0]);
  return k;
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

double total_energy(const systems::CompassGaitParams& p, const Vec& x) {
  return cg::kinetic_energy(p, x) + cg::potential_energy(p, x);
}

/// Pre-impact states near the limit cycle, drawn reproducibly.
std::vector<Vec> states_near_cycle(int n) {
  const systems::CompassGaitParams p;
  const auto sys = systems::compass_gait_system(p);
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) {
    CounterRng r(77, 0, i);
    Vec y = cg::nominal_seed();
    y[0] += r.uniform(-0.03, 0.03);
    y[1] += r.uniform(-0.2, 0.2);
    y[2] += r.uniform(-0.2, 0.2);
    out.push_back(sys.from_chart(y));
  }
  return out;
}

}  // namespace

TEST(Integrator, HarmonicGuardTime) {
  const HybridSystem s = oscillator();
  const GuardHit hit = integrate_to_guard(s, (Vec(2) << 1.0, 0.0).finished());
  EXPECT_NEAR(hit.time, std::numbers::pi / 2, 1e-8);
  EXPECT_LT(std::abs(hit.state[0]), 1e-10);
  EXPECT_NEAR(hit.state[1], -1.0, 1e-8);
}

TEST(Integrator, HarmonicGuardTimeWithCoarseSteps) {
  IntegrationOptions o;
  o.initial_step = 0.5;
  const GuardHit hit = integrate_to_guard(oscillator(), (Vec(2) << 2.0, 0.0).finished(), o);
  EXPECT_NEAR(hit.time, std::numbers::pi / 2, 1e-8);
}

TEST(Integrator, GuardNotReached) {
  HybridSystem s = oscillator();
  s.vector_field = [](const Vec&) { return (Vec(2) << 1.0, 0.0).finished(); };
  IntegrationOptions o;
  o.max_flow_time = 2.0;
  EXPECT_THROW(integrate_to_guard(s, (Vec(2) << 1.0, 0.0).finished(), o), GuardNotReached);
}

TEST(Integrator, ImmediateReimpact) {
  HybridSystem s = oscillator();
  s.vector_field = [](const Vec&) { return (Vec(2) << -1.0, 0.0).finished(); };
  s.guard_rate = [](const Vec&) { return -1.0; };
  EXPECT_THROW(integrate_to_guard(s, (Vec(2) << 1e-8, 0.0).finished()), ImmediateReimpact);
}

TEST(Integrator, InadmissibleCrossingsAreSkipped) {
  HybridSystem s = oscillator();
  int rejected = 0;
  s.crossing_admissible = [&](const Vec&) { return rejected++ > 0; };
  // The first crossing is ignored; the next downward one is a full period later.
  const GuardHit hit = integrate_to_guard(s, (Vec(2) << 1.0, 0.0).finished());
  EXPECT_NEAR(hit.time, 2.5 * std::numbers::pi, 1e-7);
}

TEST(Integrator, OscillatorReturnMapIsExact) {
  const PoincareMap map = PoincareMap::from_hybrid(oscillator());
  const Vec y = map((Vec(1) << -0.3).finished());
  EXPECT_NEAR(y[0], -1.0, 1e-8);
}

TEST(CompassGait, FlowConservesEnergy) {
  const systems::CompassGaitParams p;
  const auto sys = systems::compass_gait_system(p);
  for (const Vec& pre : states_near_cycle(20)) {
    const Vec post = sys.reset(pre);
    try {
      const GuardHit hit = integrate_to_guard(sys, post);
      const double e0 = total_energy(p, post);
      EXPECT_LT(std::abs(total_energy(p, hit.state) - e0) / std::abs(e0), 1e-8);
    } catch (const MapEvaluationError&) {
    }
  }
}

TEST(CompassGait, ImpactDoesNotAddKineticEnergy) {
  const systems::CompassGaitParams p;
  for (const Vec& pre : states_near_cycle(50)) {
    const Vec post = cg::impact(p, pre);
    EXPECT_LE(cg::kinetic_energy(p, post), cg::kinetic_energy(p, pre) * (1 + 1e-12));
  }
}

TEST(CompassGait, ImpactConservesAngularMomenta) {
  const systems::CompassGaitParams p;
  const double mass[3] = {p.m, p.m_h, p.m};
  for (const Vec& pre : states_near_cycle(20)) {
    const Vec post = cg::impact(p, pre);
    const Kinematics k0 = kinematics(p, pre, Eigen::Vector2d::Zero());
    const Eigen::Vector2d strike = k0.p[1] - (p.a + p.b) * Eigen::Vector2d(std::sin(pre[0]), std::cos(pre[0]));
    const Kinematics k1 = kinematics(p, post, strike);
    // positions are continuous through the impact
    EXPECT_LT((k1.p[1] - k0.p[1]).norm(), 1e-12);
    EXPECT_LT((k1.p[2] - k0.p[0]).norm(), 1e-12);
    // whole walker about the striking foot
    double h0 = 0, h1 = 0;
    for (int i = 0; i < 3; ++i) {
      h0 += mass[i] * cross(k0.p[i] - strike, k0.v[i]);
      h1 += mass[i] * cross(k1.p[i] - strike, k1.v[i]);
    }
    EXPECT_NEAR(h1, h0, 1e-10 * std::max(1.0, std::abs(h0)));
    // trailing leg about the hip
    const double l0 = p.m * cross(k0.p[0] - k0.p[1], k0.v[0]);
    const double l1 = p.m * cross(k1.p[2] - k1.p[1], k1.v[2]);
    EXPECT_NEAR(l1, l0, 1e-10 * std::max(1.0, std::abs(l0)));
  }
}

TEST(CompassGait, GuardResidualAtEveryEvent) {
  const systems::CompassGaitParams p;
  const auto sys = systems::compass_gait_system(p);
  int events = 0;
  for (const Vec& pre : states_near_cycle(40)) {
    try {
      const GuardHit hit = integrate_to_guard(sys, sys.reset(pre));
      EXPECT_LT(std::abs(sys.guard(hit.state)), 1e-10);
      EXPECT_LT(sys.guard_rate(hit.state), 0.0);
      ++events;
    } catch (const MapEvaluationError&) {
    }
  }
  EXPECT_GT(events, 30);
}

TEST(CompassGait, ChartRoundTrip) {
  const systems::CompassGaitParams p;
  const Vec y = cg::nominal_seed();
  const Vec x = cg::from_chart(p, y);
  EXPECT_NEAR(cg::foot_height(p, x), 0.0, 1e-14);
  EXPECT_EQ(cg::to_chart(x), y);
}

TEST(CompassGait, StableFixedPoint) {
  const PoincareMap map = PoincareMap::from_hybrid(systems::compass_gait_system({}));
  const FixedPointResult fp = find_fixed_point(map, cg::nominal_seed());
  EXPECT_LT(fp.residual, 1e-10);
  EXPECT_LT((map(fp.point) - fp.point).norm(), 1e-10);
  const JacobianEstimate jac = fd_jacobian(map, fp.point);
  EXPECT_TRUE(jac.consistent());
  EXPECT_LT(linalg::spectral_radius(jac.central), 1.0);
}

TEST(CompassGait, FixedPointSearchFailsFarAway) {
  const PoincareMap map = PoincareMap::from_hybrid(systems::compass_gait_system({}));
  EXPECT_ANY_THROW(find_fixed_point(map, (Vec(3) << 1.2, -3.0, 4.0).finished()));
}

TEST(Jacobian, LinearMapIsRecovered) {
  Mat a(2, 2);
  a << 0.3, -0.2, 0.1, 0.5;
  const PoincareMap lin(2, [a](const Vec& y) { return Vec(a * y); });
  const JacobianEstimate j = fd_jacobian(lin, (Vec(2) << 0.4, -1.0).finished());
  EXPECT_TRUE(j.central.isApprox(a, 1e-8));
  EXPECT_TRUE(j.consistent());
}

TEST(FixedPoint, AffineContraction) {
  const PoincareMap m(2, [](const Vec& y) { return Vec(0.5 * y + Vec::Ones(2)); });
  const FixedPointResult r = find_fixed_point(m, Vec::Zero(2));
  EXPECT_LT((r.point - 2.0 * Vec::Ones(2)).norm(), 1e-10);
}

namespace {

void expect_contracts(const Mat& j, const ContractionMetric& cm) {
  const Mat gap = (cm.rate * cm.rate + 1e-8) * cm.metric - j.transpose() * cm.metric * j;
  EXPECT_GE(linalg::min_eigenvalue(linalg::symmetrized(gap)), -1e-10 * cm.metric.norm());
  EXPECT_NEAR(linalg::min_eigenvalue(cm.metric), 1.0, 1e-9);
  EXPECT_LT(linalg::symmetry_residual(cm.metric), 1e-12);
}

}  // namespace

TEST(Contraction, MetricCertifiesSpectralRadius) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    CounterRng r(s, 9, 0);
    Mat j(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) j(i, k) = r.uniform(-1, 1) * (k > i ? 3.0 : 1.0);
    const double rho = linalg::spectral_radius(j);
    j *= 0.9 / rho;  // stable and typically far from normal
    const ContractionMetric cm = contraction_metric(j);
    expect_contracts(j, cm);
    if (cm.from_eigenbasis) EXPECT_NEAR(cm.rate, 0.9, 1e-9);
  }
}

TEST(Contraction, DefectiveJacobianFallsBackToStein) {
  Mat j(2, 2);
  j << 0.5, 1.0, 0.0, 0.5;
  const ContractionMetric cm = contraction_metric(j);
  EXPECT_FALSE(cm.from_eigenbasis);
  EXPECT_NEAR(cm.rate, 0.5 + 0.01 * 0.5, 1e-12);
  expect_contracts(j, cm);
}

TEST(Contraction, UnstableJacobianIsRejected) {
  Mat j(2, 2);
  j << 1.1, 0.0, 0.0, 0.2;
  EXPECT_THROW(contraction_metric(j), UnstableLinearization);
}

TEST(Contraction, InitialEllipsoidScalesWithR) {
  Mat j(2, 2);
  j << 0.5, 0.2, 0.0, 0.3;
  const Vec c = (Vec(2) << 1, 2).finished();
  const Ellipsoid e2 = contraction_init(j, 2.0, c);
  const Ellipsoid e4 = contraction_init(j, 4.0, c);
  EXPECT_TRUE(e2.center().isApprox(c));
  EXPECT_NEAR(e4.volume() / e2.volume(), 4.0, 1e-10);
  EXPECT_THROW(contraction_init(j, 1.0, c), ContractViolation);
  // the linearization maps the set strictly inside itself
  for (const auto& x : sample_uniform(e2, 500, 1)) EXPECT_TRUE(e2.contains(c + j * (x - c)));
}
