#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "cpa/metrics.hpp"
#include "cpa/reliability.hpp"
#include "cpa/select.hpp"
#include "cpa/synth.hpp"
#include "oracles.hpp"
#include "run_process.hpp"

using namespace cpa;
namespace ts = testing_support;

namespace {

const std::string kBin = CPA_BINARY;
const std::string kSmall = " --learners 'logistic:l2=1' --K 2";

int run_cpa(const std::string& args) { return ts::run("'" + kBin + "' " + args); }

nlohmann::json read(const std::filesystem::path& p) { return nlohmann::json::parse(ts::slurp(p)); }

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::stringstream ss(line);
    rows.emplace_back();
    for (std::string c; std::getline(ss, c, ',');) rows.back().push_back(c);
  }
  return rows;
}

EstimatorConfig small_estimator() {
  auto e = EstimatorConfig::from_preset("baseline");
  e.K = 2;
  e.learners = {LearnerConfig::parse("logistic:l2=1")};
  return e;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = ts::scratch_dir("exit");
  const std::string out = " --out '" + (dir / "o").string() + "'";
  EXPECT_EQ(run_cpa("simulate --setting A --n 50" + out), 0);
  EXPECT_EQ(run_cpa("simulate --setting Q" + out), 2);
  EXPECT_EQ(run_cpa("simulate --n ten" + out), 2);
  EXPECT_EQ(run_cpa("audit --setting C --alpha 1.5" + out), 2);
  EXPECT_EQ(run_cpa("audit --setting C --jobs 0" + out), 2);
  EXPECT_EQ(run_cpa("audit --setting C --method 'nonsense'" + out), 2);
  EXPECT_EQ(run_cpa("frobnicate"), 2);
  EXPECT_EQ(run_cpa("audit --data /nonexistent/data.csv" + out), 3);
  {
    std::ofstream bad(dir / "ragged.csv");
    bad << "x1,y\n1,2\n3\n";
  }
  EXPECT_EQ(run_cpa("audit --data '" + (dir / "ragged.csv").string() + "'" + out), 3);
  EXPECT_EQ(run_cpa("score --bundle '" + (dir / "ragged.csv").string() + "' --input '" + (dir / "ragged.csv").string() +
                "'" + out),
            3);
  {
    // Finite inputs whose least-squares fit overflows.
    std::ofstream big(dir / "big.csv");
    big << "x1,x2,y\n";
    RngStream r(1);
    for (int i = 0; i < 200; ++i)
      big << r.uniform() << ',' << r.uniform() << ',' << (i % 2 ? "1.7e308" : "-1.7e308") << '\n';
  }
  EXPECT_EQ(run_cpa("audit --method 'cp-residual;base=ols' --data '" + (dir / "big.csv").string() + "'" + kSmall + out),
            4);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  const auto dir = ts::scratch_dir("config");
  {
    std::ofstream c(dir / "cfg.json");
    c << R"({"setting": "B", "n": 40, "seed": 3})";
  }
  ASSERT_EQ(run_cpa("simulate --config '" + (dir / "cfg.json").string() + "' --n 30 --out '" + (dir / "o").string() + "'"),
            0);
  const auto echo = read(dir / "o" / "resolved_simulate.json");
  EXPECT_EQ(echo["setting"], "B");
  EXPECT_EQ(echo["n"], 30);
  EXPECT_FALSE(echo.contains("jobs"));
  EXPECT_EQ(read_csv(dir / "o" / "data.csv").size(), 31u);
  // Re-running from the echoed file reproduces the data.
  ASSERT_EQ(run_cpa("simulate --config '" + (dir / "o" / "resolved_simulate.json").string() + "' --out '" +
                (dir / "p").string() + "'"),
            0);
  EXPECT_EQ(ts::slurp(dir / "o" / "data.csv"), ts::slurp(dir / "p" / "data.csv"));
  {
    std::ofstream c(dir / "bad.json");
    c << R"({"setting": "B", "bogus": 1})";
  }
  EXPECT_EQ(run_cpa("simulate --config '" + (dir / "bad.json").string() + "' --out '" + (dir / "q").string() + "'"), 2);
}

TEST(Cli, SimulateMatchesLibrary) {
  const auto dir = ts::scratch_dir("simulate");
  ASSERT_EQ(run_cpa("simulate --setting C --n 100 --seed 9 --out '" + dir.string() + "'"), 0);
  const auto lib = gen_setting_c(100, RngStream(9).derive("data")).data;
  const auto got = load_csv(dir / "data.csv", "y");
  ASSERT_EQ(got.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(got.y[i], lib.y[i]);
}

TEST(Cli, AuditCoverAllHasNoUnderCoverage) {
  const auto dir = ts::scratch_dir("coverall");
  ASSERT_EQ(run_cpa("audit --setting C --n 300 --method cover-all" + kSmall + " --out '" + dir.string() + "'"), 0);
  const auto r = read(dir / "report.json");
  EXPECT_EQ(r["cvi"]["cvi_u"].get<double>(), 0.0);
  EXPECT_NEAR(r["cvi"]["cvi"].get<double>(), 0.1, 1e-12);
}

TEST(Cli, AuditMatchesLibrary) {
  const auto dir = ts::scratch_dir("audit");
  ASSERT_EQ(run_cpa("audit --setting C --n 400 --seed 21 --method 'cp-residual;base=ols' --test-n 300 --wsc-directions 10" +
                kSmall + " --out '" + dir.string() + "'"),
            0);
  const auto r = read(dir / "report.json");
  const auto data = gen_setting_c(400, RngStream(21).derive("data")).data;
  const auto tr = cpa_train_detailed(data, 0.1, MethodConfig::parse("cp-residual;base=ols"), small_estimator(),
                                     RngStream(21).derive("audit"));
  const auto want = cvi_report(cross_fitted_reliability(tr, data.X), 0.1, 0.02);
  EXPECT_NEAR(r["cvi"]["cvi"].get<double>(), want.cvi, 1e-12);
  EXPECT_NEAR(r["cvi"]["cvi_u"].get<double>(), want.cvi_u, 1e-12);
  EXPECT_NEAR(r["cvi"]["cvi_o"].get<double>(), want.cvi_o, 1e-12);
  ASSERT_TRUE(r.contains("test"));
  EXPECT_TRUE(r["test"].contains("wsc"));
  EXPECT_TRUE(r["test"].contains("oracle_cvi"));
  for (const char* f : {"cvp.csv", "diagram.csv", "labels.csv", "estimator.json", "resolved_audit.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  // Labels: one row per evaluation point of each member.
  const auto labels = read_csv(dir / "labels.csv");
  std::size_t expect = 1;
  for (const auto& f : tr.fits) expect += f.labels.labels.size();
  EXPECT_EQ(labels.size(), expect);
}

TEST(Cli, SelectMatchesLibraryAndScoreFollowsFlagRule) {
  const auto dir = ts::scratch_dir("select");
  ASSERT_EQ(run_cpa("select --setting C --n 500 --seed 5 --methods 'cp-residual;base=ols' --methods 'cqr;quantile=qlinear'" +
                kSmall + " --out '" + (dir / "sel").string() + "'"),
            0);
  const auto synth = gen_setting_c(500, RngStream(5).derive("data"));
  const auto sel = cc_select(synth.data, 0.1,
                             {MethodConfig::parse("cp-residual;base=ols"), MethodConfig::parse("cqr;quantile=qlinear")},
                             small_estimator(), RngStream(5).derive("select"), 0.05, &synth.oracle);
  const auto got = read(dir / "sel" / "selection.json");
  EXPECT_EQ(got["winner"], sel.winner().to_string());
  EXPECT_EQ(got, nlohmann::json::parse(sel.to_json().dump()));

  ASSERT_EQ(run_cpa("simulate --setting C --n 200 --seed 6 --out '" + (dir / "new").string() + "'"), 0);
  ASSERT_EQ(run_cpa("score --bundle '" + (dir / "sel" / "bundle.json").string() + "' --input '" +
                (dir / "new" / "data.csv").string() + "' --out '" + (dir / "score").string() + "'"),
            0);
  const auto bundle = TrustBundle::from_json(read(dir / "sel" / "bundle.json"));
  const auto rows = read_csv(dir / "score" / "scores.csv");
  ASSERT_EQ(rows.size(), 201u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"id", "l", "u", "trust", "flag"}));
  const auto input = load_csv(dir / "new" / "data.csv", "y");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double l = std::stod(rows[i][1]), u = std::stod(rows[i][2]), t = std::stod(rows[i][3]);
    EXPECT_LE(l, u);
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 1.0);
    EXPECT_EQ(rows[i][4] == "1", t < bundle.threshold());
    EXPECT_NEAR(t, trust_score(bundle, input.X.row(i - 1)), 1e-12);
  }
  // Wrong feature count.
  ASSERT_EQ(run_cpa("simulate --setting D --p 12 --n 20 --out '" + (dir / "wide").string() + "'"), 0);
  EXPECT_EQ(run_cpa("score --bundle '" + (dir / "sel" / "bundle.json").string() + "' --input '" +
                (dir / "wide" / "data.csv").string() + "' --out '" + (dir / "s2").string() + "'"),
            3);
}

TEST(Cli, BenchAggregatesMatchReps) {
  const auto dir = ts::scratch_dir("bench");
  ASSERT_EQ(run_cpa("bench --reps 3 --n-select 300 --n-test 300 --methods 'cp-residual;base=ols' --methods "
                "'cqr;quantile=qlinear' --methods 'zero-width;base=ols' --wsc-directions 5 --rho-values 0.3,0.5" +
                kSmall + " --out '" + dir.string() + "'"),
            0);
  const auto p = read(dir / "protocol.json");
  const auto rows = read_csv(dir / "reps.csv");
  ASSERT_EQ(rows.size(), 7u);
  ASSERT_EQ(p["slices"].size(), 2u);
  for (const auto& s : p["slices"]) {
    std::vector<double> tau, ndcg1, hit1;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (std::stod(rows[i][1]) == s["rho"].get<double>()) {
        tau.push_back(std::stod(rows[i][4]));
        ndcg1.push_back(std::stod(rows[i][5]));
        hit1.push_back(std::stod(rows[i][7]));
      }
    ASSERT_EQ(tau.size(), 3u);
    EXPECT_NEAR(s["tau_w"]["mean"].get<double>(), oracle::mean(tau), 1e-12);
    EXPECT_NEAR(s["ndcg1"]["mean"].get<double>(), oracle::mean(ndcg1), 1e-12);
    EXPECT_NEAR(s["hit1"]["mean"].get<double>(), oracle::mean(hit1), 1e-12);
  }
  EXPECT_EQ(read_csv(dir / "methods.csv").size(), 1u + 6u * 3u);
}

TEST(Cli, OutputsIndependentOfJobs) {
  EXPECT_EQ(ts::jobs_difference(kBin, "simulate --setting D --n 200 --replicates 2", "simulate"), "");
  EXPECT_EQ(ts::jobs_difference(kBin, "audit --setting C --n 400 --test-n 200 --wsc-directions 10 --K 3", "audit"),
            "");
  EXPECT_EQ(ts::jobs_difference(kBin, "select --setting C --n 400 --K 3", "select"), "");
  EXPECT_EQ(ts::jobs_difference(kBin,
                                "bench --reps 2 --n-select 300 --n-test 300 --wsc-directions 5 --methods "
                                "'cp-residual;base=ols' --methods 'cqr;quantile=qlinear'" +
                                    kSmall,
                                "bench"),
            "");
}

TEST(Cli, ScoreOutputsIndependentOfJobs) {
  const auto dir = ts::scratch_dir("score-src");
  ASSERT_EQ(run_cpa("select --setting C --n 300 --methods 'cp-residual;base=ols'" + kSmall + " --out '" +
                (dir / "sel").string() + "'"),
            0);
  ASSERT_EQ(run_cpa("simulate --setting C --n 100 --seed 2 --out '" + (dir / "new").string() + "'"), 0);
  EXPECT_EQ(ts::jobs_difference(kBin,
                                "score --bundle '" + (dir / "sel" / "bundle.json").string() + "' --input '" +
                                    (dir / "new" / "data.csv").string() + "'",
                                "score"),
            "");
}
