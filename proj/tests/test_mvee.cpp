#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "finv/mvee.hpp"
#include "oracles.hpp"

using namespace finv;

namespace {

std::vector<Vec> random_cloud(int d, int n, std::uint64_t seed) {
  std::vector<Vec> pts;
  for (int i = 0; i < n; ++i) {
    CounterRng r(seed, 0, i);
    Vec p(d);
    for (int k = 0; k < d; ++k) p[k] = r.normal() * (1.0 + k);
    pts.push_back(p);
  }
  return pts;
}

Mat random_matrix(int d, std::uint64_t seed) {
  CounterRng r(seed, 1, 0);
  Mat t(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) t(i, j) = r.uniform(-1, 1) + (i == j ? 2.0 : 0.0);
  return t;
}

}  // namespace

TEST(Mvee, SquareCornersGiveCircumscribedCircle) {
  const std::vector<Vec> sq = {(Vec(2) << 1, 1).finished(), (Vec(2) << 1, -1).finished(),
                               (Vec(2) << -1, 1).finished(), (Vec(2) << -1, -1).finished()};
  const MveeResult r = mvee(sq);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.ellipsoid.volume(), 2.0 * std::numbers::pi, 1e-4);
  EXPECT_LT(r.ellipsoid.center().norm(), 1e-6);
  for (const auto& p : sq) EXPECT_NEAR(r.ellipsoid.level(p), 1.0, 1e-6);
}

TEST(Mvee, SimplexMatchesClosedForm) {
  for (int d : {2, 3}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto pts = random_cloud(d, d + 1, 100 + s);
      const MveeResult r = mvee(pts, {1e-10});
      const double expected = oracle::simplex_mvee_volume(d, oracle::simplex_volume(pts));
      EXPECT_NEAR(r.ellipsoid.volume() / expected, 1.0, 1e-6) << "d=" << d << " seed=" << s;
    }
  }
}

TEST(Mvee, ContainsEveryInput) {
  for (int d : {2, 3, 4}) {
    const auto pts = random_cloud(d, 300, d);
    const MveeResult r = mvee(pts);
    for (const auto& p : pts) EXPECT_LE(r.ellipsoid.level(p), 1.0 + 1e-9);
  }
}

TEST(Mvee, InteriorPointsAreInactive) {
  auto pts = random_cloud(2, 40, 7);
  const MveeResult base = mvee(pts, {1e-10});
  const Vec c = base.ellipsoid.center();
  auto more = pts;
  for (int i = 0; i < 200; ++i) {
    CounterRng r(8, 0, i);
    const Vec u = uniform_in_unit_ball(2, r) * 0.9;
    more.push_back(base.ellipsoid.from_unit_ball(u));
  }
  more.push_back(c);
  const MveeResult with = mvee(more, {1e-10});
  EXPECT_NEAR(with.ellipsoid.volume() / base.ellipsoid.volume(), 1.0, 1e-6);
  EXPECT_LT((with.ellipsoid.center() - c).norm(), 1e-5);
}

TEST(Mvee, AffineEquivariance) {
  for (int d : {2, 3}) {
    for (std::uint64_t s = 0; s < 6; ++s) {
      const auto pts = random_cloud(d, 60, 20 + s);
      const Mat t = random_matrix(d, 40 + s);
      const Vec shift = Vec::LinSpaced(d, -1.0, 2.0);
      std::vector<Vec> img;
      for (const auto& p : pts) img.push_back(t * p + shift);
      const double v0 = mvee(pts).ellipsoid.volume();
      const double v1 = mvee(img).ellipsoid.volume();
      EXPECT_NEAR(v1 / (v0 * std::abs(t.determinant())), 1.0, 1e-5) << "d=" << d;
    }
  }
}

TEST(Mvee, ConvergesQuicklyOnLargeClouds) {
  const auto pts = random_cloud(3, 2000, 5);
  const MveeResult r = mvee(pts);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.gap, 1e-7);
  EXPECT_LT(r.iterations, 5000);
}

TEST(Mvee, CollinearCloudIsFlaggedDegenerate) {
  std::vector<Vec> line;
  for (int i = 0; i < 10; ++i) line.push_back((Vec(2) << i, 2.0 * i).finished());
  const MveeResult r = mvee(line);
  EXPECT_TRUE(r.degenerate);
  for (const auto& p : line) EXPECT_LE(r.ellipsoid.level(p), 1.0 + 1e-9);
  EXPECT_GT(r.ellipsoid.volume(), 0.0);
}

TEST(Mvee, RejectsEmptyInput) {
  EXPECT_THROW(mvee(std::vector<Vec>{}), ContractViolation);
}
