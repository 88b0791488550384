#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "finv/rbf.hpp"
#include "finv/systems.hpp"

using namespace finv;

namespace {
Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
}  // namespace

TEST(RbfSet, CenterOfSingleBasisIsMember) {
  const RbfSet s({v2(0.3, -0.2)}, {0.7}, 0.5);
  EXPECT_NEAR(s.value(v2(0.3, -0.2)), 1.0, 1e-15);
  EXPECT_TRUE(s.contains(v2(0.3, -0.2)));
}

TEST(RbfSet, SingleBasisAtDefaultThresholdIsTheSigmaBall) {
  const double sigma = 0.8;
  const Vec mu = v2(1, 2);
  const RbfSet s({mu}, {sigma}, kDefaultRbfGamma);
  const Ellipsoid ball = Ellipsoid::ball(mu, sigma);
  for (const auto& x : sample_uniform(Ellipsoid::ball(mu, 1.5 * sigma), 3000, 4)) {
    if (std::abs(ball.level(x) - 1.0) < 1e-9) continue;
    EXPECT_EQ(s.contains(x), ball.contains(x));
  }
  for (int i = 0; i < 8; ++i) {
    const double t = i * std::numbers::pi / 4;
    EXPECT_NEAR(s.value(mu + sigma * v2(std::cos(t), std::sin(t))), kDefaultRbfGamma, 1e-14);
  }
  EXPECT_NEAR(s.volume() / ball.volume(), 1.0, 0.03);
}

TEST(RbfSet, RejectsBadParameters) {
  EXPECT_THROW(RbfSet({v2(0, 0)}, {0.0}, 0.5), ContractViolation);
  EXPECT_THROW(RbfSet({v2(0, 0)}, {1.0}, 1.0), ContractViolation);  // γ must be < m
  EXPECT_THROW(RbfSet({v2(0, 0), v2(1, 1)}, {1.0}, 0.5), ContractViolation);
}

TEST(RbfSet, BoundingBoxEnclosesTheSet) {
  const RbfSet s({v2(-1, 0), v2(1, 0.5)}, {0.4, 0.7}, 0.05);
  const Box box = s.bounding_box();
  for (const auto& x : sample_uniform(Ellipsoid::ball(Vec::Zero(2), 6.0), 20000, 1))
    if (s.contains(x)) {
      EXPECT_TRUE((x.array() >= box.lower.array()).all());
      EXPECT_TRUE((x.array() <= box.upper.array()).all());
    }
}

TEST(RbfSampling, SamplesAreMembers) {
  const RbfSet s({v2(-0.6, 0), v2(0.6, 0)}, {0.4, 0.4}, 0.3);
  for (const auto& x : sample_uniform(s, 5000, 2)) EXPECT_TRUE(s.contains(x));
}

TEST(RbfSampling, SingleBasisMatchesBallCovariance) {
  const double sigma = 1.3;
  const RbfSet s({v2(0, 0)}, {sigma}, kDefaultRbfGamma);
  const auto pts = sample_uniform(s, 40000, 3);
  Mat cov = Mat::Zero(2, 2);
  for (const auto& p : pts) cov += p * p.transpose();
  cov /= pts.size();
  const double expected = sigma * sigma / 4.0;  // r²/(d+2)
  EXPECT_NEAR(cov(0, 0), expected, 0.05 * expected);
  EXPECT_NEAR(cov(1, 1), expected, 0.05 * expected);
  EXPECT_NEAR(cov(0, 1), 0.0, 0.05 * expected);
}

TEST(RbfSampling, DeterministicPerIndex) {
  const RbfSet s({v2(0, 0)}, {1.0}, 0.5);
  const auto a = sample_uniform(s, 30, 5, 2);
  const auto b = sample_uniform(s, 60, 5, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(RbfSampling, TinyAcceptanceIsAnError) {
  // Narrow spike far from a wide, low-weight companion: the box is huge.
  const RbfSet s({v2(0, 0), v2(1e4, 0)}, {1e-4, 1e-4}, 0.9);
  EXPECT_THROW(sample_uniform(s, 10, 0, 0, 4e4), SamplingError);
}

TEST(FitRbf, SinglePointCollapsesToLowerClamp) {
  const std::vector<Vec> u = {v2(0.25, -0.5)};
  const RbfFit f = fit_rbf(u, 1);
  EXPECT_TRUE(f.feasible);
  EXPECT_EQ(f.set.centers()[0], u[0]);
  EXPECT_NEAR(f.set.widths()[0], kMinRbfWidth, 1e-12);
}

TEST(FitRbf, ContainsEveryTrainingPoint) {
  for (std::size_t m : {1u, 2u, 3u}) {
    const auto pts = sample_uniform(Ellipsoid::ball(v2(0.5, 0.5), 1.0), 400, 10 + m);
    const RbfFit f = fit_rbf(pts, m);
    EXPECT_TRUE(f.feasible);
    for (const auto& p : pts) EXPECT_GE(f.set.value(p) - f.set.gamma(), -1e-6);
  }
}

TEST(FitRbf, PenaltyRoundsDescend) {
  const auto pts = sample_uniform(Ellipsoid::ball(v2(0, 0), 1.0), 300, 7);
  const RbfFit f = fit_rbf(pts, 2);
  for (const auto& round : f.trace)
    for (std::size_t i = 1; i < round.size(); ++i) EXPECT_LE(round[i], round[i - 1]);
}

TEST(FitRbf, TwoDiscsRecoverBothCenters) {
  const systems::NecParams p;
  std::vector<Vec> pts;
  for (const Vec& c : {p.c1, p.c2})
    for (const auto& x : sample_uniform(Ellipsoid::ball(c, p.r), 300, c[0] > 0 ? 1 : 2))
      pts.push_back(x);
  RbfFitOptions o;
  o.gamma = 0.3;
  const RbfFit f = fit_rbf(pts, 2, std::nullopt, o);
  EXPECT_TRUE(f.feasible);
  EXPECT_TRUE(f.set.contains(p.c1));
  EXPECT_TRUE(f.set.contains(p.c2));
  std::vector<double> xs = {f.set.centers()[0][0], f.set.centers()[1][0]};
  std::sort(xs.begin(), xs.end());
  EXPECT_LT(xs[0], -0.3);
  EXPECT_GT(xs[1], 0.3);
}

TEST(FitRbf, ConvexCloudGivesOneBlob) {
  // CEC-like inliers: a single ellipse is recovered as one connected blob
  // with both centers inside it.
  const auto truth = systems::cec_true_set({});
  const auto pts = sample_uniform(truth, 500, 3);
  const RbfFit f = fit_rbf(pts, 2);
  EXPECT_TRUE(f.feasible);
  const Vec mid = 0.5 * (f.set.centers()[0] + f.set.centers()[1]);
  EXPECT_TRUE(f.set.contains(mid));
  EXPECT_TRUE(f.set.contains(truth.center()));
}

TEST(RunRbf, NecCertifiesWithBothCenters) {
  RunOptions o;
  o.samples = 1000;
  o.eps_target = 0.05;
  o.beta = 1e-9;
  o.max_iters = 30;
  o.threads = 2;
  RbfRunOptions ro;
  ro.fit.gamma = 0.3;
  const auto r = run_rbf(systems::nec_poincare({}), Ellipsoid::ball(Vec::Zero(2), std::sqrt(10.0)),
                         ro, o);
  EXPECT_EQ(r.termination, Termination::Certified);
  EXPECT_LE(r.certificate.epsilon_star, 0.05);
  ASSERT_NE(r.region.rbf(), nullptr);
  EXPECT_TRUE(r.region.contains(systems::NecParams{}.c1));
  EXPECT_TRUE(r.region.contains(systems::NecParams{}.c2));
}
