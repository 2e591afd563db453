#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "cpa/distributions.hpp"
#include "cpa/error.hpp"
#include "cpa/parallel.hpp"
#include "cpa/synth.hpp"
#include "oracles.hpp"
#include "run_process.hpp"

using namespace cpa;

namespace {

std::vector<double> unit(std::size_t p, std::size_t k) {
  std::vector<double> x(p, 0.0);
  x[k] = 1.0;
  return x;
}

std::vector<double> noise_of(const SynthData& s) {
  std::vector<double> e(s.data.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = s.data.y[i] - s.data.oracle->mu[i];
  return e;
}

}  // namespace

TEST(SettingA, MeanFunction) {
  auto s = gen_setting_a(10, RngStream(1));
  EXPECT_EQ(s.oracle.mu(std::vector<double>(10, 0.0)), 0.0);
  EXPECT_EQ(s.oracle.mu(unit(10, 0)), 1.0);
  EXPECT_EQ(s.oracle.mu(unit(10, 5)), 0.0);
  EXPECT_EQ(s.oracle.sigma(unit(10, 0)), 1.0);
}

TEST(SettingA, ResidualsCentred) {
  auto s = gen_setting_a(100000, RngStream(2));
  std::vector<double> r(s.data.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    double m = 0;
    for (std::size_t j = 0; j < 10; ++j) m += s.data.X(i, j) * s.beta[j];
    r[i] = s.data.y[i] - m;
  }
  EXPECT_NEAR(oracle::mean(r), 0.0, 0.01);
  EXPECT_NEAR(oracle::variance(r), 1.0, 0.02);
}

TEST(SettingB, MeanFunctionAndHeavyTails) {
  auto s = gen_setting_b(100000, RngStream(3));
  EXPECT_NEAR(s.oracle.mu(std::vector<double>(10, 0.0)), 2.0, 1e-15);
  auto x = std::vector<double>(10, 0.0);
  x[0] = 0.25;
  EXPECT_NEAR(s.oracle.mu(x), 3.0, 1e-15);
  const auto e = noise_of(s);
  const double m = oracle::mean(e), v = oracle::variance(e);
  double m4 = 0;
  for (double d : e) m4 += std::pow(d - m, 4);
  m4 /= static_cast<double>(e.size());
  EXPECT_GT(m4 / (v * v), 10.0);
}

TEST(SettingC, ScaleFunction) {
  auto s = gen_setting_c(1000000, RngStream(4));
  EXPECT_NEAR(s.oracle.sigma(std::vector<double>(10, 0.0)), 1.0, 1e-15);
  auto x = std::vector<double>(10, 0.0);
  x[0] = 2.0;
  EXPECT_NEAR(s.oracle.sigma(x), std::numbers::e, 1e-12);
  std::vector<double> bin;
  const auto e = noise_of(s);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    if (s.data.X(i, 0) >= 1.9 && s.data.X(i, 0) <= 2.1) bin.push_back(e[i]);
  ASSERT_GT(bin.size(), 5000u);
  EXPECT_NEAR(std::sqrt(oracle::variance(bin)), std::numbers::e, 0.03 * std::numbers::e);
}

TEST(SettingD, SparseSupportAndScale) {
  auto s = gen_setting_d(2000, 20, RngStream(5));
  int ones = 0;
  for (double b : s.beta) {
    EXPECT_TRUE(b == 0.0 || b == 1.0);
    ones += b == 1.0 ? 1 : 0;
  }
  EXPECT_EQ(ones, 5);
  for (double v : s.data.oracle->sigma) EXPECT_GE(v, 1.0);
  EXPECT_EQ(s.data.oracle->noise, NoiseFamily::StudentT2);
  EXPECT_THROW(gen_setting_d(10, 4, RngStream(5)), ConfigError);
}

TEST(SettingD, ReproducibleAndSharedDesign) {
  auto a = gen_setting_d(300, 12, RngStream(6), 3);
  auto b = gen_setting_d(300, 12, RngStream(6), 3);
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_EQ(a.replicates, b.replicates);
  ASSERT_EQ(a.replicates.size(), 300u);
  EXPECT_EQ(a.replicates[0].size(), 3u);
  const RngStream design(77);
  auto c = gen_setting_d(300, 12, RngStream(8), 0, &design);
  auto d = gen_setting_d(300, 12, RngStream(9), 0, &design);
  EXPECT_EQ(c.beta, d.beta);
  EXPECT_NE(c.data.y, d.data.y);
  // Same beta at the same x gives the same sigma.
  EXPECT_EQ(c.oracle.sigma(c.data.X.row(0)), d.oracle.sigma(c.data.X.row(0)));
}

TEST(SettingD, NeighbouringColumnsCorrelated) {
  auto s = gen_setting_d(20000, 10, RngStream(10));
  std::vector<double> c0(s.data.size()), c1(s.data.size());
  for (std::size_t i = 0; i < c0.size(); ++i) {
    c0[i] = s.data.X(i, 0);
    c1[i] = s.data.X(i, 1);
  }
  const double m0 = oracle::mean(c0), m1 = oracle::mean(c1);
  double cov = 0;
  for (std::size_t i = 0; i < c0.size(); ++i) cov += (c0[i] - m0) * (c1[i] - m1);
  cov /= static_cast<double>(c0.size() - 1);
  EXPECT_GT(cov / std::sqrt(oracle::variance(c0) * oracle::variance(c1)), 0.1);
}

TEST(Feasibility, Design) {
  auto s = gen_feasibility(20, 500, RngStream(11));
  EXPECT_EQ(s.oracle.mu(std::vector<double>(20, 0.0)), 0.0);
  EXPECT_EQ(s.oracle.sigma(std::vector<double>(20, 0.0)), 0.5);
  EXPECT_NEAR(s.oracle.mu(unit(20, 0)), 1.0, 1e-15);
  EXPECT_NEAR(s.oracle.sigma(unit(20, 0)), 1.5, 1e-15);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    for (std::size_t j = 0; j < 20; ++j) {
      ASSERT_GE(s.data.X(i, j), -1.0);
      ASSERT_LE(s.data.X(i, j), 1.0);
    }
  EXPECT_THROW(gen_feasibility(0, 10, RngStream(1)), ConfigError);
}

TEST(Feasibility, RepRestrictsFeatures) {
  EstimatorConfig est;
  est.learners = {LearnerConfig::logistic(1.0)};
  const auto cp = MethodConfig::parse("cp-residual;base=ols");
  const auto a = feasibility_rep(5, 300, 200, 100, cp, est, 0.1, RngStream(3), {0});
  const auto b = feasibility_rep(5, 300, 200, 100, cp, est, 0.1, RngStream(3));
  // Same predictor and test rows, so the oracle side agrees.
  EXPECT_EQ(a.eta_true, b.eta_true);
  ASSERT_EQ(a.eta_hat.size(), 100u);
  double mae = 0;
  for (std::size_t i = 0; i < 100; ++i) mae += std::abs(a.eta_hat[i] - a.eta_true[i]) / 100.0;
  EXPECT_NEAR(mae, a.mae, 1e-12);
  EXPECT_THROW(feasibility_rep(5, 300, 200, 100, cp, est, 0.1, RngStream(3), {5}), ConfigError);
}

TEST(Generate, SpecIsReproducible) {
  DgpSpec spec;
  spec.setting = Setting::B;
  spec.n = 50;
  spec.seed = 12;
  auto a = generate(spec), b = generate(DgpSpec::from_json(spec.to_json()));
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_THROW(setting_from_string("E"), ConfigError);
}

TEST(OracleCoverage, ClosedForms) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(oracle_coverage(-inf, inf, 3.0, 2.0, NoiseFamily::StandardNormal), 1.0);
  EXPECT_NEAR(oracle_coverage(1.0 - 1.6449 * 2.0, 1.0 + 1.6449 * 2.0, 1.0, 2.0, NoiseFamily::StandardNormal), 0.9,
              1e-4);
  // t2 cdf: 1/2 + x / (2 sqrt(2 + x^2)).
  EXPECT_NEAR(oracle_coverage(-inf, std::sqrt(2.0), 0.0, 1.0, NoiseFamily::StudentT2),
              0.5 + std::sqrt(2.0) / (2.0 * 2.0), 1e-12);
  EXPECT_EQ(oracle_coverage(0.0, 0.0, 0.0, 1.0, NoiseFamily::StandardNormal), 0.0);
  EXPECT_THROW(oracle_coverage(0, 1, 0, 0.0, NoiseFamily::StandardNormal), ConfigError);
  EXPECT_THROW(oracle_coverage(1, 0, 0, 1.0, NoiseFamily::StandardNormal), ConfigError);
}

TEST(OracleCvi, Fixtures) {
  for (Setting st : {Setting::A, Setting::B, Setting::C}) {
    auto s = generate(st, 400, 10, RngStream(13));
    auto test = generate(st, 400, 10, RngStream(14)).data;
    auto stub = fit_method(MethodConfig::parse("oracle-stub"), s.data, 0.1, RngStream(1), &s.oracle);
    auto all = fit_method(MethodConfig::parse("cover-all"), s.data, 0.1, RngStream(1));
    auto zero = fit_method(MethodConfig::parse("zero-width;base=ols"), s.data, 0.1, RngStream(1));
    EXPECT_NEAR(oracle_cvi(*stub, test, 0.1), 0.0, 1e-10) << to_string(st);
    EXPECT_NEAR(oracle_cvi(*all, test, 0.1), 0.1, 1e-12);
    EXPECT_NEAR(oracle_cvi(*zero, test, 0.1), 0.9, 1e-12);
  }
  Dataset bare = gen_setting_a(10, RngStream(1)).data;
  bare.oracle.reset();
  auto all = fit_method(MethodConfig::parse("cover-all"), bare, 0.1, RngStream(1));
  EXPECT_THROW(oracle_etas(*all, bare), DataError);
}

namespace {

ProtocolConfig fixture_protocol() {
  ProtocolConfig c;
  c.methods = {MethodConfig::parse("zero-width;base=ols"), MethodConfig::parse("oracle-stub"),
               MethodConfig::parse("cover-all")};
  c.n_select = 300;
  c.n_test = 300;
  c.reps = 3;
  c.est.learners = {LearnerConfig::logistic(1.0)};
  c.est.K = 2;
  c.wsc_directions = 5;
  return c;
}

}  // namespace

TEST(Protocol, FixtureRanking) {
  auto r = run_protocol(fixture_protocol(), RngStream(15));
  ASSERT_EQ(r.reps.size(), 3u);
  for (const auto& rep : r.reps) {
    EXPECT_NEAR(rep.methods[1].oracle_cvi, 0.0, 1e-10);
    EXPECT_EQ(rep.rank_oracle[0], 1u);
    EXPECT_EQ(rep.rank_est[0], 1u);
    EXPECT_EQ(rep.tau_w, 1.0);
    EXPECT_EQ(rep.hit1, 1.0);
    EXPECT_EQ(rep.ndcg1, 1.0);
  }
}

TEST(Protocol, DeterministicAndAggregatesMatchReps) {
  set_default_jobs(1);
  auto cfg = fixture_protocol();
  cfg.methods = {MethodConfig::parse("cp-residual;base=ols"), MethodConfig::parse("cqr;quantile=qlinear"),
                 MethodConfig::parse("zero-width;base=ols")};
  cfg.rho_values = {0.3, 0.5};
  auto a = run_protocol(cfg, RngStream(16));
  set_default_jobs(2);
  auto b = run_protocol(cfg, RngStream(16));
  set_default_jobs(1);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  ASSERT_EQ(a.slices.size(), 2u);

  const auto dir = testing_support::scratch_dir("protocol");
  a.write_rep_csv(dir / "reps.csv");
  std::ifstream in(dir / "reps.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::vector<double>> tau;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<std::string> f;
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    ASSERT_EQ(f.size(), 9u);
    tau[f[1]].push_back(std::stod(f[4]));
  }
  for (const auto& s : a.slices) {
    const auto& v = tau[format_double(s.rho)];
    ASSERT_EQ(v.size(), 3u);
    EXPECT_NEAR(oracle::mean(v), s.tau_w_mean, 1e-12);
  }
}
