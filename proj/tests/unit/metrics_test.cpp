#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpa/error.hpp"
#include "cpa/metrics.hpp"
#include "oracles.hpp"
#include "run_process.hpp"

using namespace cpa;

TEST(Cvi, ConstantAtTarget) {
  std::vector<double> e(7, 0.9);
  auto r = cvi_report(e, 0.1);
  EXPECT_NEAR(r.cvi, 0, 1e-15);
  EXPECT_EQ(r.pi_minus, 0.0);
  EXPECT_EQ(r.pi_plus, 0.0);
  EXPECT_EQ(r.cmu, 0.0);
  EXPECT_EQ(r.cmo, 0.0);
}

TEST(Cvi, TwoPoints) {
  std::vector<double> e{0.8, 1.0};
  auto r = cvi_report(e, 0.1, 0.0);
  EXPECT_NEAR(r.cvi, 0.1, 1e-15);
  EXPECT_NEAR(r.cvi_u, 0.05, 1e-15);
  EXPECT_NEAR(r.cvi_o, 0.05, 1e-15);
  EXPECT_EQ(r.pi_minus, 0.5);
  EXPECT_EQ(r.pi_plus, 0.5);
  EXPECT_NEAR(r.cmu, 0.1, 1e-15);
  EXPECT_NEAR(r.cmo, 0.1, 1e-15);
}

TEST(Cvi, ToleranceBand) {
  std::vector<double> e{0.8, 0.9, 0.99};
  auto r = cvi_report(e, 0.1, 0.05);
  EXPECT_NEAR(r.pi_minus, 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.pi_plus, 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.cmu, 0.1, 1e-15);
  EXPECT_NEAR(r.cmo, 0.09, 1e-15);
}

TEST(Cvi, Errors) {
  std::vector<double> none;
  EXPECT_THROW(cvi_report(none, 0.1), DataError);
  std::vector<double> e{0.5};
  EXPECT_THROW(cvi_report(e, 0.1, 1.5), ConfigError);
}

TEST(Cvi, IdentitiesOnFuzzedInputs) {
  RngStream r(1);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + r.uniform_index(200);
    std::vector<double> e(n);
    for (auto& v : e) v = r.uniform_index(5) == 0 ? 0.9 : r.uniform();
    const double alpha = 0.01 + 0.5 * r.uniform();
    const auto rep = cvi_report(e, alpha, 0.02);
    ASSERT_NEAR(rep.cvi, rep.cvi_u + rep.cvi_o, 1e-12);
    const auto curve = cvp_curve(e, alpha);
    ASSERT_NEAR(curve.area_below(), rep.cvi_u, 1e-12);
    ASSERT_NEAR(curve.area_above(), rep.cvi_o, 1e-12);
  }
}

TEST(Cvp, FlatCurveAndCrossing) {
  std::vector<double> e(5, 0.7);
  auto c = cvp_curve(e, 0.1);
  for (double q : c.q) EXPECT_EQ(q, 0.7);
  EXPECT_EQ(c.crossing(), 1.0);
  RngStream r(2);
  std::vector<double> f(100);
  for (auto& v : f) v = r.uniform();
  auto g = cvp_curve(f, 0.1);
  const auto rep = cvi_report(f, 0.1, 0.0);
  // Direct scan of the sorted values.
  std::vector<double> s = f;
  std::sort(s.begin(), s.end());
  std::size_t k = 0;
  while (k < s.size() && s[k] < 0.9) ++k;
  EXPECT_NEAR(g.crossing(), static_cast<double>(k + 1) / 100.0, 1e-12);
  EXPECT_NEAR(g.crossing(), rep.pi_minus, 1.0 / 100 + 1e-12);
}

TEST(Cvp, WassersteinDistance) {
  std::vector<double> a{0.1, 0.5, 0.9}, b{0.2, 0.4, 0.9};
  EXPECT_NEAR(cvp_w1(a, b), (0.1 + 0.1 + 0) / 3.0, 1e-15);
  std::vector<double> c{0.3};
  // Q_c = 0.3 on (0,1]; |Q_a - 0.3| averaged over thirds.
  EXPECT_NEAR(cvp_w1(a, c), (0.2 + 0.2 + 0.6) / 3.0, 1e-15);
  EXPECT_EQ(cvp_w1(a, a), 0.0);
}

TEST(Marginal, Basics) {
  std::vector<Interval> all(4, Interval{-INFINITY, INFINITY});
  std::vector<double> y{1, 2, 3, 4};
  auto m = marginal_stats(all, y);
  EXPECT_EQ(m.coverage, 1.0);
  EXPECT_TRUE(m.infinite_length);
  std::vector<Interval> iv{{0, 2}, {1, 3}, {5, 7}, {3, 5}};
  auto n = marginal_stats(iv, y);
  EXPECT_EQ(n.coverage, 0.75);
  EXPECT_EQ(n.avg_length, 2.0);
  // Closed intervals.
  EXPECT_EQ(coverage_labels(iv, y), (std::vector<double>{1, 1, 0, 1}));
}

TEST(Diagram, Examples) {
  std::vector<double> p{0.6, 0.8}, l{1, 1};
  auto d = reliability_diagram(p, l, 1);
  ASSERT_EQ(d.bins.size(), 1u);
  EXPECT_NEAR(d.bins[0].mean_confidence, 0.7, 1e-15);
  EXPECT_EQ(d.bins[0].accuracy, 1.0);
  EXPECT_NEAR(d.ece, 0.3, 1e-15);
  std::vector<double> q(6, 0.25), same(6, 1.0);
  EXPECT_NEAR(reliability_diagram(q, same, 3).ece, 0.75, 1e-15);
  EXPECT_THROW(reliability_diagram(p, l, 0), ConfigError);
  EXPECT_THROW(reliability_diagram(p, l, 3), DataError);
}

TEST(Diagram, CalibratedSimulation) {
  RngStream r(3);
  std::vector<double> p(10000), l(10000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = r.uniform();
    l[i] = r.bernoulli(p[i]) ? 1.0 : 0.0;
  }
  EXPECT_LE(reliability_diagram(p, l, 10).ece, 0.02);
}

TEST(Diagram, CsvMatchesBins) {
  auto dir = testing_support::scratch_dir("diagram");
  RngStream r(4);
  std::vector<double> p(50), l(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p[i] = r.uniform();
    l[i] = r.bernoulli(0.5) ? 1.0 : 0.0;
  }
  auto d = reliability_diagram(p, l, 5);
  d.write_csv(dir / "d.csv");
  std::ifstream in(dir / "d.csv");
  std::string line;
  std::getline(in, line);
  double ece = 0;
  std::size_t total = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string f[4];
    for (auto& x : f) std::getline(ss, x, ',');
    const double cnt = std::stod(f[1]);
    ece += cnt * std::abs(std::stod(f[3]) - std::stod(f[2]));
    total += static_cast<std::size_t>(cnt);
  }
  EXPECT_EQ(total, 50u);
  EXPECT_NEAR(ece / 50.0, d.ece, 1e-12);
}

namespace {
Matrix random_matrix(std::size_t n, std::size_t p, RngStream r) {
  Matrix X(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) X(i, j) = r.normal();
  return X;
}
}  // namespace

TEST(Wsc, AllCoveredAndFullWindow) {
  auto X = random_matrix(40, 3, RngStream(1));
  std::vector<double> ones(40, 1.0), mixed(40);
  for (std::size_t i = 0; i < 40; ++i) mixed[i] = i % 4 ? 1.0 : 0.0;
  for (double delta : {0.1, 0.5, 1.0}) EXPECT_EQ(wsc(X, ones, delta, 5, RngStream(2)).value, 1.0);
  EXPECT_NEAR(wsc(X, mixed, 1.0, 5, RngStream(2)).value, 0.75, 1e-15);
}

TEST(Wsc, KnownUncoveredCluster) {
  // 1-D, twelve points; the three around x = 2 are uncovered.
  Matrix X(12, 1);
  std::vector<double> cov(12, 1.0);
  for (std::size_t i = 0; i < 12; ++i) X(i, 0) = static_cast<double>(i) * 0.5 - 1.0;
  cov[6] = cov[7] = cov[8] = 0.0;
  const double delta = 0.25;
  auto r = wsc(X, cov, delta, 1, RngStream(3));
  const double want = oracle::worst_slab_bruteforce(X, cov, r.direction, delta);
  EXPECT_EQ(r.value, want);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.mass, 3u);
}

TEST(Wsc, MatchesBruteForcePerDirection) {
  RngStream r(5);
  for (int c = 0; c < 30; ++c) {
    const std::size_t n = 2 + r.uniform_index(49), p = 1 + r.uniform_index(3);
    Matrix X = random_matrix(n, p, r.derive("X", static_cast<std::uint64_t>(c)));
    // A few duplicated rows so projections tie.
    for (std::size_t i = 1; i < n; i += 7)
      for (std::size_t j = 0; j < p; ++j) X(i, j) = X(i - 1, j);
    std::vector<double> cov(n);
    for (auto& v : cov) v = r.bernoulli(0.8) ? 1.0 : 0.0;
    const double delta = std::max(0.05, r.uniform());
    if (delta * static_cast<double>(n) < 1.0) continue;
    for (std::uint64_t d = 0; d < 20; ++d) {
      auto res = wsc(X, cov, delta, 1, RngStream(d, static_cast<std::uint64_t>(c)));
      ASSERT_EQ(res.value, oracle::worst_slab_bruteforce(X, cov, res.direction, delta)) << c << " " << d;
    }
  }
}

TEST(Wsc, MoreDirectionsNeverIncrease) {
  auto X = random_matrix(200, 4, RngStream(6));
  std::vector<double> cov(200);
  RngStream r(7);
  for (std::size_t i = 0; i < 200; ++i) cov[i] = r.bernoulli(X(i, 0) > 0 ? 0.7 : 0.95) ? 1.0 : 0.0;
  double prev = 2;
  for (int k : {1, 5, 20, 80}) {
    const double v = wsc(X, cov, 0.1, k, RngStream(8)).value;
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Wsc, SplitVariantAndErrors) {
  auto X = random_matrix(100, 2, RngStream(9));
  std::vector<double> cov(100, 1.0);
  cov[3] = 0;
  auto s = wsc(X, cov, 0.2, 10, RngStream(10), WscVariant::Split);
  EXPECT_GE(s.value, 0.0);
  EXPECT_LE(s.value, 1.0);
  EXPECT_EQ(s.to_json()["variant"], "split");
  EXPECT_THROW(wsc(X, cov, 0.0, 1, RngStream(1)), ConfigError);
  EXPECT_THROW(wsc(X, cov, 0.001, 1, RngStream(1)), ConfigError);
  Matrix one(1, 2, 0.0);
  std::vector<double> c1{1.0};
  EXPECT_THROW(wsc(one, c1, 1.0, 1, RngStream(1)), DataError);
}

TEST(Ranking, WeightedKendall) {
  std::vector<double> d{0.1, 0.2, 0.5};
  std::vector<std::size_t> same{0, 1, 2}, rev{2, 1, 0}, swap12{1, 0, 2};
  EXPECT_EQ(weighted_kendall_tau(d, same), 1.0);
  EXPECT_EQ(weighted_kendall_tau(d, rev), -1.0);
  EXPECT_NEAR(weighted_kendall_tau(d, swap12), 0.75, 1e-15);
  std::vector<double> eq{0.3, 0.3, 0.3};
  bool degenerate = false;
  EXPECT_EQ(weighted_kendall_tau(eq, rev, &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
}

TEST(Ranking, KendallAgainstPairEnumeration) {
  RngStream r(11);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + r.uniform_index(8);
    std::vector<double> d(n);
    for (auto& v : d) v = static_cast<double>(r.uniform_index(5)) / 4.0;
    std::vector<std::size_t> est(n);
    std::iota(est.begin(), est.end(), 0);
    r.shuffle(est);
    std::vector<std::size_t> pos(n);
    for (std::size_t k = 0; k < n; ++k) pos[est[k]] = k;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (d[i] >= d[j]) continue;  // i truly better than j
        const double w = d[j] - d[i];
        num += pos[i] < pos[j] ? w : -w;
        den += w;
      }
    const double want = den == 0 ? 0.0 : num / den;
    ASSERT_NEAR(weighted_kendall_tau(d, est), want, 1e-12);
  }
}

TEST(Ranking, NdcgAndHit) {
  std::vector<double> d{0, 1, 2};
  std::vector<std::size_t> perfect{0, 1, 2}, worst{2, 1, 0};
  EXPECT_EQ(ndcg_at_k(d, perfect, 3), 1.0);
  EXPECT_EQ(ndcg_at_k(d, worst, 1), 0.0);
  // k = 2 with ranking {1, 0, 2}: DCG = 1 + 2/log2(3), IDCG = 2 + 1/log2(3).
  std::vector<std::size_t> mid{1, 0, 2};
  EXPECT_NEAR(ndcg_at_k(d, mid, 2), (1 + 2 / std::log2(3.0)) / (2 + 1 / std::log2(3.0)), 1e-15);
  std::vector<std::size_t> a{0, 1, 2, 3, 4}, b{0, 1, 2, 3, 4}, c{3, 4, 0, 1, 2}, e{1, 0, 4, 2, 3};
  EXPECT_EQ(hit_at_k(a, b, 3), 1.0);
  EXPECT_EQ(hit_at_k(a, c, 2), 0.0);
  EXPECT_NEAR(hit_at_k(a, e, 3), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(ranking_from_scores(std::vector<double>{0.3, 0.1, 0.3, 0.0}), (std::vector<std::size_t>{3, 1, 0, 2}));
}
