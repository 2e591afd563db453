#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cpa/error.hpp"
#include "cpa/learners/calibration.hpp"
#include "cpa/metrics.hpp"
#include "cpa/rng.hpp"
#include "oracles.hpp"

using namespace cpa;

TEST(Pava, NoViolatorsIsIdentity) {
  std::vector<double> v{0, 0, 1, 1, 1}, w;
  EXPECT_EQ(pava(v, w), v);
}

TEST(Pava, PoolsThreeWay) {
  std::vector<double> s{0.1, 0.2, 0.3}, l{1, 0, 0};
  auto c = fit_isotonic(s, l);
  for (double x : s) EXPECT_NEAR(c.apply(x), 1.0 / 3.0, 1e-15);
  std::vector<double> w{1, 1, 1};
  auto want = oracle::isotonic_exhaustive(l, w);
  for (double v : want) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Pava, MatchesExhaustivePartition) {
  RngStream r(31);
  for (int c = 0; c < 500; ++c) {
    const std::size_t n = 1 + r.uniform_index(8);
    std::vector<double> v(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = c % 2 ? static_cast<double>(r.uniform_index(2)) : r.normal();
      w[i] = c % 3 ? 1.0 : 0.1 + r.uniform();
    }
    const auto got = pava(v, w);
    const auto want = oracle::isotonic_exhaustive(v, w);
    ASSERT_EQ(got.size(), n);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(got[i], want[i], 1e-12) << c;
    ASSERT_NEAR(oracle::weighted_sse(v, w, got), oracle::weighted_sse(v, w, want), 1e-12);
  }
}

TEST(Isotonic, AllOnesAndMonotone) {
  std::vector<double> s{0.3, 0.1, 0.7}, l{1, 1, 1};
  auto c = fit_isotonic(s, l);
  for (double x : {-1.0, 0.2, 0.5, 2.0}) EXPECT_EQ(c.apply(x), 1.0);
  RngStream r(2);
  std::vector<double> s2(300), l2(300);
  for (std::size_t i = 0; i < 300; ++i) {
    s2[i] = r.uniform();
    l2[i] = r.bernoulli(s2[i]) ? 1.0 : 0.0;
  }
  auto c2 = fit_isotonic(s2, l2);
  double prev = -1;
  for (double x = -0.1; x <= 1.1; x += 0.01) {
    EXPECT_GE(c2.apply(x), prev);
    prev = c2.apply(x);
  }
}

namespace {
struct Calibrated {
  std::vector<double> s, l;
};
Calibrated bernoulli_scores(std::size_t n, RngStream r) {
  Calibrated c{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    c.s[i] = r.uniform();
    c.l[i] = r.bernoulli(c.s[i]) ? 1.0 : 0.0;
  }
  return c;
}
double ece_of(const Calibrator& cal, const Calibrated& d) {
  std::vector<double> p(d.s.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = cal.apply(d.s[i]);
  return reliability_diagram(p, d.l, 10).ece;
}
}  // namespace

TEST(Platt, CalibratedScoresStayCalibrated) {
  for (int rep = 0; rep < 5; ++rep) {
    auto fit = bernoulli_scores(3000, RngStream(40 + static_cast<std::uint64_t>(rep)));
    auto test = bernoulli_scores(3000, RngStream(90 + static_cast<std::uint64_t>(rep)));
    const double before = reliability_diagram(test.s, test.l, 10).ece;
    const double after = ece_of(fit_platt(fit.s, fit.l), test);
    // Binomial noise of a bin mean with 300 rows.
    EXPECT_LE(after, before + std::sqrt(0.25 / 300.0));
  }
}

TEST(Platt, AllZeroLabels) {
  std::vector<double> s{0.1, 0.5, 0.9}, l{0, 0, 0};
  auto c = fit_platt(s, l);
  for (double x : s) EXPECT_LE(c.apply(x), 1e-6);
  EXPECT_FALSE(c.flag().empty());
}

TEST(Platt, Monotone) {
  auto d = bernoulli_scores(500, RngStream(3));
  auto c = fit_platt(d.s, d.l);
  EXPECT_GT(c.a(), 0.0);
  EXPECT_LT(c.apply(0.2), c.apply(0.8));
}

TEST(Binning, OneBinIsMean) {
  std::vector<double> s{0.1, 0.4, 0.6, 0.9}, l{1, 0, 0, 1};
  auto c = fit_binning(s, l, 1);
  for (double x : {0.0, 0.5, 1.0}) EXPECT_EQ(c.apply(x), 0.5);
}

TEST(Binning, NBinsReproduceLabels) {
  std::vector<double> s{0.3, 0.1, 0.2, 0.5}, l{0, 1, 1, 0};
  auto c = fit_binning(s, l, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c.apply(s[i]), l[i]);
}

TEST(Binning, TwoBinsHandPartition) {
  std::vector<double> s{0.9, 0.2, 0.6, 0.1, 0.4, 0.8}, l{1, 0, 1, 1, 0, 0};
  auto c = fit_binning(s, l, 2);
  // Sorted: 0.1(1) 0.2(0) 0.4(0) | 0.6(1) 0.8(0) 0.9(1).
  for (double x : {0.1, 0.2, 0.4}) EXPECT_NEAR(c.apply(x), 1.0 / 3.0, 1e-15);
  for (double x : {0.6, 0.8, 0.9}) EXPECT_NEAR(c.apply(x), 2.0 / 3.0, 1e-15);
}

TEST(Calibrator, SpecParseAndJson) {
  EXPECT_EQ(CalibrationSpec::parse("binning:7").bins, 7);
  EXPECT_EQ(CalibrationSpec::parse("platt").method, CalibrationMethod::Platt);
  EXPECT_THROW(CalibrationSpec::parse("spline"), ConfigError);
  auto d = bernoulli_scores(200, RngStream(8));
  for (const char* m : {"none", "isotonic", "platt", "binning:5"}) {
    auto c = fit_calibrator(CalibrationSpec::parse(m), d.s, d.l);
    auto back = Calibrator::from_json(nlohmann::json::parse(c.to_json().dump()));
    for (double x : d.s) ASSERT_EQ(c.apply(x), back.apply(x)) << m;
  }
}

TEST(Calibrator, IsotonicDoesNotWorsenEce) {
  int ok = 0;
  for (int rep = 0; rep < 10; ++rep) {
    RngStream r(300 + static_cast<std::uint64_t>(rep));
    // Miscalibrated raw scores: labels follow s^2.
    Calibrated fit{std::vector<double>(2000), std::vector<double>(2000)}, test = fit;
    for (auto* d : {&fit, &test})
      for (std::size_t i = 0; i < 2000; ++i) {
        d->s[i] = r.uniform();
        d->l[i] = r.bernoulli(d->s[i] * d->s[i]) ? 1.0 : 0.0;
      }
    const double raw = reliability_diagram(test.s, test.l, 10).ece;
    const double cal = ece_of(fit_isotonic(fit.s, fit.l), test);
    ok += cal <= raw + 0.01 ? 1 : 0;
  }
  EXPECT_GE(ok, 9);
}
