#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "finv/rng.hpp"
#include "finv/parallel.hpp"

using finv::CounterRng;

TEST(CounterRng, SameKeySameStream) {
  CounterRng a(7, 3, 11), b(7, 3, 11);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(CounterRng, DistinctKeysDiffer) {
  std::set<std::uint64_t> first;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t st = 0; st < 4; ++st)
      for (std::uint64_t i = 0; i < 4; ++i) first.insert(CounterRng(s, st, i).next());
  EXPECT_EQ(first.size(), 64u);
}

TEST(CounterRng, UniformMomentsAndRange) {
  double sum = 0, sq = 0;
  const int n = 200000;
  CounterRng r(1, 0, 0);
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(CounterRng, NormalMoments) {
  double sum = 0, sq = 0, quart = 0;
  const int n = 200000;
  CounterRng r(2, 5, 9);
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
    quart += z * z * z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
  EXPECT_NEAR(quart / n, 3.0, 0.1);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  finv::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(ParallelFor, RethrowsWorkerException) {
  EXPECT_THROW(finv::parallel_for(100, 3,
                                  [](std::size_t i) {
                                    if (i == 42) throw std::runtime_error("boom");
                                  }),
               std::runtime_error);
}
