#include <cmath>

#include <gtest/gtest.h>

#include "fcns/error.hpp"
#include "fcns/rank_tests.hpp"
#include "fcns/rng.hpp"
#include "test_support.hpp"

namespace fcns::metrics {
namespace {

using testing::throws_kind;
using testing::enumerated_mann_whitney_p;

double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return u;
}

TEST(MannWhitneyExact, SeparatedTriples) {
  const std::vector<double> a{0.1, 0.2, 0.3};
  const std::vector<double> b{0.7, 0.8, 0.9};
  const auto r = mann_whitney_exact(a, b);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(enumerated_mann_whitney_p(a, b), 0.1);
  EXPECT_NEAR(r.p_value, 0.1, 1e-12);
  EXPECT_EQ(r.method, "mann_whitney_exact");
}

TEST(MannWhitneyExact, MatchesEnumerationWithTies) {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const int n1 = 1 + static_cast<int>(rng.below(7));
    const int n2 = 1 + static_cast<int>(rng.below(7));
    std::vector<double> a(n1), b(n2);
    for (auto& v : a) v = static_cast<double>(rng.below(5));
    for (auto& v : b) v = static_cast<double>(rng.below(5)) + 0.5 * (trial % 2);
    const auto r = mann_whitney_exact(a, b);
    EXPECT_EQ(r.statistic, u_statistic(a, b));
    EXPECT_NEAR(r.p_value, enumerated_mann_whitney_p(a, b), 1e-12) << "trial " << trial;
  }
}

TEST(MannWhitneyNormal, MatchesReferenceWithTieCorrection) {
  // Reference from an independent statistics package with continuity
  // correction and tie-corrected variance.
  std::vector<double> a, b;
  for (int i = 0; i < 15; ++i) a.push_back(0.1 * i);
  a.insert(a.end(), {0.5, 0.5, 0.7});
  for (int i = 0; i < 14; ++i) b.push_back(0.05 + 0.13 * i);
  b.insert(b.end(), {0.5, 0.7});
  const auto r = mann_whitney_normal(a, b);
  EXPECT_EQ(r.statistic, 115.5);
  EXPECT_NEAR(r.p_value, 0.33355470754559624, 1e-12);
}

TEST(MannWhitneyNormal, AllTiedGivesOne) {
  const std::vector<double> a{1.0, 1.0}, b{1.0, 1.0, 1.0};
  EXPECT_EQ(mann_whitney_normal(a, b).p_value, 1.0);
}

TEST(MannWhitneyU, SwitchesOnPooledSize) {
  std::vector<double> a(10), b(11);
  for (int i = 0; i < 10; ++i) a[i] = i;
  for (int i = 0; i < 11; ++i) b[i] = i + 3.5;
  EXPECT_EQ(mann_whitney_u(a, b).method, "mann_whitney_normal");
  EXPECT_EQ(mann_whitney_u(a, b, 21).method, "mann_whitney_exact");
  EXPECT_TRUE(throws_kind([&] { mann_whitney_u({}, b); }, ErrorKind::kGrouping));
}

TEST(Welch, MatchesReference) {
  const std::vector<double> a{1, 2, 3, 4, 5.5};
  const std::vector<double> b{2.5, 6, 7, 8.2};
  const auto r = welch_t(a, b);
  EXPECT_NEAR(r.statistic, -1.9422230634920423, 1e-12);
  EXPECT_NEAR(r.p_value, 0.1067634595746394, 1e-10);
  EXPECT_EQ(r.method, "welch_t");
  const std::vector<double> single{1.0};
  EXPECT_TRUE(throws_kind([&] { welch_t(single, b); }, ErrorKind::kGrouping));
}

}  // namespace
}  // namespace fcns::metrics
