#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/conformal.hpp"
#include "cpa/dataset.hpp"
#include "cpa/reliability.hpp"

namespace cpa {

enum class Setting { A, B, C, D, Feasibility };

std::string to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct DgpSpec {
  Setting setting = Setting::A;
  std::size_t n = 2000;
  /// Covariate dimension; only D and the feasibility design honour it.
  std::size_t p = 10;
  std::uint64_t seed = 0;
  /// Replicate responses per row (Setting D).
  int replicates = 0;

  nlohmann::json to_json() const;
  static DgpSpec from_json(const nlohmann::json& j);
};

struct SynthData {
  Dataset data;
  OracleModel oracle;
  std::vector<double> beta;
  /// replicates[i][r]: extra responses at row i drawn with the same mu, sigma.
  std::vector<std::vector<double>> replicates;
};

SynthData gen_setting_a(std::size_t n, RngStream rng);
SynthData gen_setting_b(std::size_t n, RngStream rng);
SynthData gen_setting_c(std::size_t n, RngStream rng);
/// `design` fixes the coefficient support and the scale moment; by default
/// it is derived from rng. Pass the same design to share them across samples.
SynthData gen_setting_d(std::size_t n, std::size_t p, RngStream rng, int replicates = 0,
                        const RngStream* design = nullptr);
SynthData gen_feasibility(std::size_t d, std::size_t n, RngStream rng);
SynthData generate(Setting s, std::size_t n, std::size_t p, RngStream rng, int replicates = 0,
                   const RngStream* design = nullptr);
SynthData generate(const DgpSpec& spec);

/// Skew-normal draw with location 0 and scale 1.
double skew_normal(double shape, RngStream& rng);

/// P(l <= mu + sigma * eps <= u) for the given noise family.
double oracle_coverage(double l, double u, double mu, double sigma, NoiseFamily noise);
/// Row-wise oracle coverage of pred on a dataset carrying oracle columns.
std::vector<double> oracle_etas(const IntervalPredictor& pred, const Dataset& test);
double oracle_cvi(const IntervalPredictor& pred, const Dataset& test, double alpha);

struct FeasibilityResult {
  double mae = 0, rmse = 0;
  std::vector<double> eta_hat, eta_true;
};

/// One fixed conformal predictor fitted on n_train rows, one reliability
/// member learned from n_eval coverage labels, compared with the exact
/// conditional coverage on n_test fresh rows. `features` restricts the
/// member's inputs to those columns (empty: all of them); {0} gives the
/// one-dimensional smoother in x1.
FeasibilityResult feasibility_rep(std::size_t d, std::size_t n_train, std::size_t n_eval, std::size_t n_test,
                                  const MethodConfig& cp, const EstimatorConfig& est, double alpha, RngStream rng,
                                  const std::vector<std::size_t>& features = {});

struct ProtocolConfig {
  std::vector<Setting> settings{Setting::C};
  std::vector<MethodConfig> methods;
  std::size_t n_select = 2000;
  std::size_t n_test = 2000;
  std::size_t p = 10;
  int reps = 20;
  EstimatorConfig est = EstimatorConfig::from_preset("desk");
  double alpha = 0.1;
  /// Sweep axes; empty means the single value est.rho / n_select.
  std::vector<double> rho_values;
  std::vector<std::size_t> n_values;
  double wsc_delta = 0.1;
  /// 0 skips worst-slab coverage.
  int wsc_directions = 100;

  nlohmann::json to_json() const;
  static ProtocolConfig from_json(const nlohmann::json& j);
};

struct MethodRep {
  double est_cvi = 0, oracle_cvi = 0, coverage = 0, avg_length = 0, wsc = 0;
  bool failed = false;
  std::string error;
};

struct ProtocolRep {
  Setting setting = Setting::C;
  double rho = 0.5;
  std::size_t n = 0;
  int rep = 0;
  std::vector<MethodRep> methods;
  std::vector<std::size_t> rank_est, rank_oracle;
  double tau_w = 0, ndcg1 = 0, ndcg3 = 0, hit1 = 0, hit3 = 0;
  /// Distance between the CVP curves of the estimated and oracle reliability on the test rows.
  std::vector<double> cvp_w1;
  bool tau_degenerate = false;
};

struct SliceSummary {
  Setting setting = Setting::C;
  double rho = 0.5;
  std::size_t n = 0;
  double tau_w_mean = 0, tau_w_sd = 0;
  double ndcg1_mean = 0, ndcg1_sd = 0, ndcg3_mean = 0, ndcg3_sd = 0;
  double hit1_mean = 0, hit3_mean = 0, hit3_sd = 0;
  std::vector<double> est_cvi_mean, oracle_cvi_mean, coverage_mean, length_mean, wsc_mean, w1_mean;
};

struct ProtocolReport {
  ProtocolConfig config;
  std::vector<ProtocolRep> reps;
  std::vector<SliceSummary> slices;

  nlohmann::json to_json() const;
  void write_rep_csv(const std::filesystem::path& path) const;
  void write_method_csv(const std::filesystem::path& path) const;
};

/// Selection-deployment protocol: per rep, CPA ranks the methods on a
/// selection sample and the oracle ranks their full-data refits on a test
/// sample; rankings are compared by weighted tau, NDCG and Hit. Reps and
/// sweep points run under parallel_for.
ProtocolReport run_protocol(const ProtocolConfig& cfg, RngStream rng);

/// Summaries of a set of reps sharing (setting, rho, n).
SliceSummary summarize(const std::vector<const ProtocolRep*>& reps, std::size_t methods);

}  // namespace cpa
