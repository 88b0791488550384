#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "finv/systems.hpp"

using namespace finv;
using namespace finv::systems;

TEST(Cec, FixesCenterAndBoundary) {
  const CecParams p;
  EXPECT_EQ(cec_map(p.c, p), p.c);
  const Ellipsoid truth = cec_true_set(p);
  EXPECT_NEAR(truth.volume(), std::numbers::pi, 1e-12);
  for (int i = 0; i < 16; ++i) {
    const double t = 2 * std::numbers::pi * i / 16;
    const Vec u = (Vec(2) << std::cos(t), std::sin(t)).finished();
    const Vec x = truth.from_unit_ball(u);
    EXPECT_LT((cec_map(x, p) - x).norm(), 1e-12);
  }
}

TEST(Cec, InsideContractsOutsideExpands) {
  const CecParams p;
  const Ellipsoid truth = cec_true_set(p);
  for (const auto& x : sample_uniform(truth, 500, 1)) EXPECT_TRUE(truth.contains(cec_map(x, p)));
  const Vec out = truth.scaled(1.5).from_unit_ball((Vec(2) << 1, 0).finished());
  EXPECT_NEAR(truth.level(cec_map(out, p)), 1.5 * 1.5, 1e-12);
}

TEST(Cec, RejectsIndefiniteMetric) {
  CecParams p;
  p.metric << 1, 2, 2, 1;
  EXPECT_THROW(cec_poincare(p), ContractViolation);
}

TEST(Nec, PiecewiseBranches) {
  const NecParams p;
  EXPECT_EQ(nec_map(p.c1, p), p.c1);
  EXPECT_EQ(nec_map(p.c2, p), p.c2);
  const Vec a = (Vec(2) << -0.3, 0.1).finished();
  EXPECT_TRUE(nec_map(a, p).isApprox(0.5 * (a + p.c1)));
  const Vec far = (Vec(2) << 0.0, 1.0).finished();
  EXPECT_TRUE(nec_map(far, p).isApprox(1.3 * far));
  // the touching point of the two discs is on neither open disc
  EXPECT_TRUE(nec_map(Vec::Zero(2), p).isZero());
  EXPECT_NEAR(nec_true_set_volume(p), 2 * std::numbers::pi * 0.36, 1e-12);
}

TEST(Nec, DiscsAreInvariant) {
  const NecParams p;
  for (const Vec& c : {p.c1, p.c2})
    for (const auto& x : sample_uniform(Ellipsoid::ball(c, p.r), 300, 2)) {
      EXPECT_TRUE(nec_true_set_contains(x, p));
      EXPECT_TRUE(nec_true_set_contains(nec_map(x, p), p));
    }
}

TEST(Nec, ValidatesParameters) {
  NecParams p;
  p.kappa = 0.9;
  EXPECT_THROW(nec_poincare(p), ContractViolation);
}

TEST(Identity, IsIdentity) {
  const PoincareMap m = identity_poincare(3);
  const Vec y = (Vec(3) << 1, -2, 3).finished();
  EXPECT_EQ(m(y), y);
  EXPECT_EQ(m.iterate(y, 20), y);
}
