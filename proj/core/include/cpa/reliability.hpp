#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/conformal.hpp"
#include "cpa/dataset.hpp"
#include "cpa/learners/calibration.hpp"
#include "cpa/learners/models.hpp"
#include "cpa/learners/selection.hpp"

namespace cpa {

/// Coverage indicators I = 1{l(x) <= y <= u(x)} on an evaluation set.
struct CoverageLabels {
  Matrix X;
  std::vector<double> labels;
  std::vector<std::size_t> ids;
  std::uint64_t split_id = 0;

  double mean() const;
  void write_csv(const std::filesystem::path& path) const;
};

CoverageLabels generate_labels(const IntervalPredictor& pred, const Dataset& eval_set, std::uint64_t split_id = 0);

struct EstimatorConfig {
  /// Candidate classifiers; several are compared by cross-validated log-loss.
  std::vector<LearnerConfig> learners = default_classifier_grid();
  CalibrationSpec calibration;
  int K = 5;
  /// Share of each split given to the conformal fit.
  double rho = 0.5;
  /// Upper bound on the folds used for learner selection.
  int folds = 5;
  std::string preset = "baseline";

  /// baseline, desk, pert_1 .. pert_7.
  static EstimatorConfig from_preset(const std::string& name);
  static std::vector<std::string> preset_names();
  void validate() const;
  nlohmann::json to_json() const;
  static EstimatorConfig from_json(const nlohmann::json& j);
};

/// Three-model classifier grid (logistic, shallow forest, small boosted
/// ensemble) used by the `desk` preset.
std::vector<LearnerConfig> desk_classifier_grid();

/// One calibrated classifier per split: the mean of two (classifier,
/// calibrator) pairs, each calibrator fitted on the half its classifier did
/// not see. A split with single-class labels gives a constant member.
class ReliabilityMember {
 public:
  struct Pair {
    ModelPtr model;
    Calibrator calibrator;
  };

  ReliabilityMember() = default;
  ReliabilityMember(std::vector<Pair> pairs, LearnerConfig learner);
  static ReliabilityMember constant(double value, std::string flag);

  double predict(std::span<const double> x) const;
  bool is_constant() const { return pairs_.empty(); }
  const std::vector<Pair>& pairs() const { return pairs_; }
  const LearnerConfig& learner() const { return learner_; }
  const std::string& flag() const { return flag_; }

  nlohmann::json to_json() const;
  static ReliabilityMember from_json(const nlohmann::json& j);

 private:
  std::vector<Pair> pairs_;
  LearnerConfig learner_;
  double value_ = 0.0;
  std::string flag_;
};

/// A member together with the data it was fitted on. `oof[i]` is the
/// prediction for labels.X row i from the pair whose classifier did not see it.
struct MemberFit {
  ReliabilityMember member;
  CoverageLabels labels;
  std::vector<double> oof;
  std::vector<double> cv_loss;
  int selection_folds = 0;
};

/// Selects a classifier on the labels, then cross-fits calibration.
MemberFit fit_member(CoverageLabels labels, const EstimatorConfig& est, RngStream rng);

class ReliabilityEstimator {
 public:
  ReliabilityEstimator() = default;
  ReliabilityEstimator(std::vector<ReliabilityMember> members, EstimatorConfig config, MethodConfig cp, double alpha);

  double predict(std::span<const double> x) const;
  std::vector<double> predict(const Matrix& X) const;

  const std::vector<ReliabilityMember>& members() const { return members_; }
  const EstimatorConfig& config() const { return config_; }
  const MethodConfig& method() const { return cp_; }
  double alpha() const { return alpha_; }
  const std::vector<std::string>& flags() const { return flags_; }
  void add_flag(std::string f) { flags_.push_back(std::move(f)); }

  /// Split and fit streams are reconstructible from these.
  std::uint64_t seed = 0, stream_id = 0;

  nlohmann::json to_json() const;
  static ReliabilityEstimator from_json(const nlohmann::json& j);

 private:
  std::vector<ReliabilityMember> members_;
  EstimatorConfig config_;
  MethodConfig cp_;
  double alpha_ = 0.1;
  std::vector<std::string> flags_;
};

struct TrainResult {
  ReliabilityEstimator estimator;
  std::vector<MemberFit> fits;
  std::vector<SplitPlan> splits;
};

/// K splits of d; on each, fit the conformal method on the first part, label
/// the second part and fit a member there. Members run under parallel_for.
TrainResult cpa_train_detailed(const Dataset& d, double alpha, const MethodConfig& cp, const EstimatorConfig& est,
                               RngStream rng, const OracleModel* oracle = nullptr);
ReliabilityEstimator cpa_train(const Dataset& d, double alpha, const MethodConfig& cp, const EstimatorConfig& est,
                               RngStream rng, const OracleModel* oracle = nullptr);

inline double predict_reliability(const ReliabilityEstimator& est, std::span<const double> x) {
  return est.predict(x);
}

/// Reliability of every row of d without in-sample reuse: for each member
/// whose evaluation part held the row, its out-of-fold value; otherwise the
/// member's prediction. Averaged over members.
std::vector<double> cross_fitted_reliability(const TrainResult& result, const Matrix& X);

}  // namespace cpa
