#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/dataset.hpp"
#include "cpa/learners/models.hpp"
#include "cpa/quantile.hpp"
#include "cpa/rng.hpp"

namespace cpa {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  /// Set when the endpoints had to be repaired (CQR crossing).
  bool flagged = false;

  bool contains(double y) const { return lower <= y && y <= upper; }
  double width() const { return upper - lower; }
};

enum class MethodKind {
  CpResidual,
  CpStudentized,
  Cqr,
  CvPlus,
  Lcp,
  Rlcp,
  Bootstrap,
  Qrf,
  OlsT,
  // Test fixtures; never part of a default candidate list.
  CoverAll,
  ZeroWidth,
  OracleStub,
};

/// Interval method plus the learners it uses. Text form:
/// `name[;key=value...]`, e.g. `cqr;quantile=gbt:trees=200,depth=3` or
/// `lcp;bandwidth=0.5`. Learner values use the LearnerConfig text form.
struct MethodConfig {
  MethodKind kind = MethodKind::CpResidual;
  LearnerConfig base = LearnerConfig::automatic();
  LearnerConfig dispersion = LearnerConfig::automatic();
  /// `auto` picks qlinear or pinball boosting by cross-validated pinball loss.
  LearnerConfig quantile = LearnerConfig::automatic();
  LearnerConfig forest = default_qrf_forest();
  /// Share of the data used for calibration by split methods.
  double calib_fraction = 0.5;
  int folds = 5;
  /// LCP kernel bandwidth; 0 selects it automatically.
  double bandwidth = 0.0;
  /// RLCP noise draws.
  int draws = 10;
  /// Bootstrap refits.
  int resamples = 200;
  double epsilon = 1e-6;
  /// Test hook: RLCP without the location noise.
  bool suppress_noise = false;

  static MethodConfig of(MethodKind kind);
  static LearnerConfig default_qrf_forest();
  std::string name() const;
  std::string to_string() const;
  static MethodConfig parse(const std::string& text);
  nlohmann::json to_json() const;
  static MethodConfig from_json(const nlohmann::json& j);
  /// QRF and the bootstrap carry no conformal guarantee.
  bool is_conformal() const;
  bool is_fixture() const;

  bool operator==(const MethodConfig&) const = default;
};

std::string method_name(MethodKind kind);
MethodKind method_kind_from(const std::string& name);

/// Ground-truth location and scale, used only by the oracle-width fixture.
struct OracleModel {
  std::function<double(std::span<const double>)> mu;
  std::function<double(std::span<const double>)> sigma;
  NoiseFamily noise = NoiseFamily::StandardNormal;
};

class IntervalPredictor {
 public:
  virtual ~IntervalPredictor() = default;
  virtual Interval predict(std::span<const double> x) const = 0;
  std::vector<Interval> predict(const Matrix& X) const;
  virtual nlohmann::json to_json() const;

  const MethodConfig& config() const { return config_; }
  double alpha() const { return alpha_; }
  /// Fit-time warnings (fallbacks, clamping).
  const std::vector<std::string>& flags() const { return flags_; }
  void add_flag(std::string f) { flags_.push_back(std::move(f)); }

 protected:
  IntervalPredictor(MethodConfig config, double alpha) : config_(std::move(config)), alpha_(alpha) {}
  virtual void write(nlohmann::json& j) const = 0;
  MethodConfig config_;
  double alpha_;
  std::vector<std::string> flags_;
};

using PredictorPtr = std::shared_ptr<const IntervalPredictor>;

/// CP-Residual (scale absent) and CP-Studentized.
class SplitPredictor final : public IntervalPredictor {
 public:
  SplitPredictor(MethodConfig config, double alpha, ModelPtr mean, ModelPtr scale, double threshold,
                 std::vector<double> scores);
  Interval predict(std::span<const double> x) const override;
  double threshold() const { return q_; }
  const std::vector<double>& scores() const { return scores_; }
  const Model& mean() const { return *mean_; }
  const Model* scale() const { return scale_.get(); }
  /// sigma_hat(x) clamped at 0, plus epsilon.
  double spread(std::span<const double> x) const;

 private:
  void write(nlohmann::json& j) const override;
  ModelPtr mean_, scale_;
  double q_;
  std::vector<double> scores_;
};

class CqrPredictor final : public IntervalPredictor {
 public:
  CqrPredictor(MethodConfig config, double alpha, ModelPtr lo, ModelPtr hi, double threshold,
               std::vector<double> scores);
  Interval predict(std::span<const double> x) const override;
  double threshold() const { return q_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  void write(nlohmann::json& j) const override;
  ModelPtr lo_, hi_;
  double q_;
  std::vector<double> scores_;
};

class CvPlusPredictor final : public IntervalPredictor {
 public:
  CvPlusPredictor(MethodConfig config, double alpha, std::vector<ModelPtr> fold_models, std::vector<int> fold_of,
                  std::vector<double> residuals);
  Interval predict(std::span<const double> x) const override;

 private:
  void write(nlohmann::json& j) const override;
  std::vector<ModelPtr> models_;
  std::vector<int> fold_of_;
  std::vector<double> residuals_;
};

/// LCP (Gaussian kernel exp(-d^2 / h)) and RLCP (exp(-|x + xi - X_i|^2 / 2h^2),
/// xi ~ N(0, h^2 I), thresholds averaged over m draws).
class LocalPredictor final : public IntervalPredictor {
 public:
  LocalPredictor(MethodConfig config, double alpha, ModelPtr mean, Matrix calib_X, std::vector<double> scores,
                 double bandwidth, RngStream rng);
  Interval predict(std::span<const double> x) const override;
  /// Weighted-quantile threshold t(x).
  double threshold(std::span<const double> x) const;
  double bandwidth() const { return h_; }
  bool randomized() const { return config_.kind == MethodKind::Rlcp; }

 private:
  void write(nlohmann::json& j) const override;
  double kernel_threshold(std::span<const double> center, double denom) const;
  ModelPtr mean_;
  Matrix X_;  // calibration rows, sorted by score
  std::vector<double> scores_;  // ascending
  double h_;
  RngStream rng_;
};

class BootstrapPredictor final : public IntervalPredictor {
 public:
  BootstrapPredictor(MethodConfig config, double alpha, std::vector<ModelPtr> refits,
                     std::vector<double> centered_residuals, RngStream rng);
  Interval predict(std::span<const double> x) const override;

 private:
  void write(nlohmann::json& j) const override;
  std::vector<ModelPtr> refits_;
  std::vector<double> residuals_;
  RngStream rng_;
};

class QrfPredictor final : public IntervalPredictor {
 public:
  QrfPredictor(MethodConfig config, double alpha, std::shared_ptr<const Forest> forest);
  Interval predict(std::span<const double> x) const override;
  const Forest& forest() const { return *forest_; }

 private:
  void write(nlohmann::json& j) const override;
  std::shared_ptr<const Forest> forest_;
};

class OlsIntervalPredictor final : public IntervalPredictor {
 public:
  OlsIntervalPredictor(MethodConfig config, double alpha, std::shared_ptr<const OlsModel> model);
  Interval predict(std::span<const double> x) const override;
  double t_quantile() const { return t_; }

 private:
  void write(nlohmann::json& j) const override;
  std::shared_ptr<const OlsModel> model_;
  double t_;
};

/// Fixtures: (-inf, inf), a zero-width interval at the base prediction, and
/// the oracle-width interval mu(x) +- F^-1(1 - alpha/2) sigma(x).
class FixturePredictor final : public IntervalPredictor {
 public:
  FixturePredictor(MethodConfig config, double alpha, ModelPtr point, OracleModel oracle);
  Interval predict(std::span<const double> x) const override;

 private:
  void write(nlohmann::json& j) const override;
  ModelPtr point_;
  OracleModel oracle_;
};

/// Resolves `auto` through select_learner over the default regressor grid.
ModelPtr fit_regressor(const LearnerConfig& config, const Dataset& train, RngStream rng);

PredictorPtr fit_cp_residual(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                             RngStream rng);
PredictorPtr fit_cp_studentized(const Dataset& train, const Dataset& calib, double alpha,
                                const MethodConfig& config, RngStream rng);
PredictorPtr fit_cqr(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                     RngStream rng);
PredictorPtr fit_cv_plus(const Dataset& train, double alpha, const MethodConfig& config, RngStream rng);
PredictorPtr fit_lcp(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                     RngStream rng);
PredictorPtr fit_rlcp(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                      RngStream rng);
PredictorPtr fit_bootstrap(const Dataset& train, double alpha, const MethodConfig& config, RngStream rng);
PredictorPtr fit_qrf(const Dataset& train, double alpha, const MethodConfig& config, RngStream rng);
PredictorPtr fit_ols_interval(const Dataset& train, double alpha, const MethodConfig& config = MethodConfig::of(MethodKind::OlsT));

/// Fits any method on `data`, doing the internal pred/calib split for split
/// methods. `oracle` is required only by the oracle-width fixture.
PredictorPtr fit_method(const MethodConfig& config, const Dataset& data, double alpha, RngStream rng,
                        const OracleModel* oracle = nullptr);

PredictorPtr predictor_from_json(const nlohmann::json& j);

/// Median over calibration rows of the distance to their k-th nearest
/// training row, k = floor(sqrt(n_train)).
double rlcp_bandwidth(const Matrix& train_X, const Matrix& calib_X);

/// Candidate LCP bandwidths and the leave-one-out calibration coverage of each.
struct BandwidthSearch {
  std::vector<double> grid;
  std::vector<double> coverage;
  double chosen = 0.0;
};
BandwidthSearch lcp_auto_bandwidth(const Matrix& calib_X, std::span<const double> scores, double alpha);

}  // namespace cpa
