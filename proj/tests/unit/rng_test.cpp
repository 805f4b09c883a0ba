#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fcns/rng.hpp"

namespace fcns {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
  Rng c(43);
  EXPECT_NE(Rng(42).next(), c.next());
}

TEST(Rng, RawStreamIsMt19937_64) {
  std::mt19937_64 reference(7);
  Rng r(7);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(r.next(), reference());
}

TEST(Rng, UniformRange) {
  Rng r(1);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Rng, BelowCoversRange) {
  Rng r(2);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[r.below(7)];
  for (int h : hits) EXPECT_GT(h, 850);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  double s = 0.0;
  double s2 = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(4);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w.begin(), w.end());
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(0, 0), derive_seed(0, 1));
  EXPECT_NE(derive_seed(0, 1), derive_seed(1, 0));
  EXPECT_EQ(derive_seed(9, 3), derive_seed(9, 3));
}

TEST(Rng, Fnv1a) {
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(hash_seed(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(hash_seed("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hash_seed("foobar"), 0x85944171f73967e8ULL);
}

}  // namespace
}  // namespace fcns
