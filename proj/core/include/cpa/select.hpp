#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/conformal.hpp"
#include "cpa/reliability.hpp"

namespace cpa {

/// Deployable pair of the selected interval method and its trust ensemble.
struct TrustBundle {
  PredictorPtr predictor;
  ReliabilityEstimator trust;
  /// Inputs with trust below 1 - alpha - margin are flagged.
  double margin = 0.05;
  /// Feature count of the training data.
  std::size_t features = 0;

  double alpha() const { return trust.alpha(); }
  double threshold() const { return 1.0 - alpha() - margin; }
  nlohmann::json to_json() const;
  static TrustBundle from_json(const nlohmann::json& j);
};

struct TrustedInterval {
  Interval interval;
  double trust = 0;
  bool flagged = false;
};

struct CcSelection {
  std::vector<MethodConfig> candidates;
  /// scores[k][m]: CVI of candidate m on split k; +inf when the cell failed.
  std::vector<std::vector<double>> scores;
  std::vector<double> mean_cvi;
  std::size_t selected = 0;
  /// members[m][k]: the single-split reliability member of each cell.
  std::vector<std::vector<ReliabilityMember>> members;
  std::vector<std::string> warnings;
  TrustBundle bundle;

  const MethodConfig& winner() const { return candidates[selected]; }
  nlohmann::json to_json() const;
};

/// Scores every candidate on K shared splits by the CVI of a single-split
/// reliability member, picks the lowest mean (earlier candidate on ties),
/// refits the winner on all of d and keeps its K members for trust scores.
/// K and rho come from `est`. Cell streams are keyed by the split index and
/// the candidate text, so adding a candidate leaves the others unchanged.
CcSelection cc_select(const Dataset& d, double alpha, const std::vector<MethodConfig>& candidates,
                      const EstimatorConfig& est, RngStream rng, double trust_margin = 0.05,
                      const OracleModel* oracle = nullptr);

double trust_score(const TrustBundle& bundle, std::span<const double> x);
inline double trust_score(const CcSelection& s, std::span<const double> x) { return trust_score(s.bundle, x); }

TrustedInterval predict_with_trust(const TrustBundle& bundle, std::span<const double> x);
inline TrustedInterval predict_with_trust(const CcSelection& s, std::span<const double> x) {
  return predict_with_trust(s.bundle, x);
}

}  // namespace cpa
