#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/dataset.hpp"
#include "cpa/learners/tree.hpp"
#include "cpa/matrix.hpp"
#include "cpa/rng.hpp"

namespace cpa {

enum class LearnerFamily { Auto, Ols, Knn, Forest, Gbt, Logistic, Constant, LinearQuantile };
enum class GbtLoss { Squared, Pinball, Logistic };

/// Family plus hyperparameters. Fields that do not apply to a family are
/// ignored. Text form: `family[:key=value,...]`, e.g.
/// `forest:trees=200,depth=10` or `gbt:loss=pinball,tau=0.05`.
struct LearnerConfig {
  LearnerFamily family = LearnerFamily::Ols;
  int trees = 100;
  int max_depth = -1;
  int min_leaf = 1;
  /// 0 means round(sqrt(p)), negative means all features.
  int max_features = 0;
  double lr = 0.1;
  GbtLoss loss = GbtLoss::Squared;
  double tau = 0.5;
  int k = 5;
  double l2 = 1.0;
  bool bootstrap = true;
  double constant = 0.0;

  static LearnerConfig ols() { return {}; }
  static LearnerConfig knn(int k);
  static LearnerConfig forest(int trees, int max_depth, int min_leaf = 1);
  static LearnerConfig gbt(GbtLoss loss, int trees, double lr, int max_depth, double tau = 0.5);
  static LearnerConfig logistic(double l2);
  static LearnerConfig linear_quantile(double tau);
  static LearnerConfig automatic();

  std::string to_string() const;
  static LearnerConfig parse(const std::string& text);
  nlohmann::json to_json() const;
  static LearnerConfig from_json(const nlohmann::json& j);

  bool operator==(const LearnerConfig&) const = default;
};

class Model {
 public:
  virtual ~Model() = default;
  virtual double predict(std::span<const double> x) const = 0;
  std::vector<double> predict(const Matrix& X) const;
  virtual nlohmann::json to_json() const = 0;

  const LearnerConfig& config() const { return config_; }
  std::size_t train_rows() const { return train_rows_; }
  /// Non-empty when the fit hit a documented fallback.
  const std::string& flag() const { return flag_; }

 protected:
  LearnerConfig config_;
  std::size_t train_rows_ = 0;
  std::string flag_;
  nlohmann::json meta_json() const;
  void read_meta(const nlohmann::json& j);
};

using ModelPtr = std::shared_ptr<const Model>;

class ConstantModel final : public Model {
 public:
  ConstantModel(double value, std::size_t rows, std::string flag = {});
  double predict(std::span<const double>) const override { return value_; }
  nlohmann::json to_json() const override;
  static std::shared_ptr<ConstantModel> from_json(const nlohmann::json& j);
  double value() const { return value_; }

 private:
  double value_;
};

class OlsModel final : public Model {
 public:
  double predict(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  static std::shared_ptr<OlsModel> from_json(const nlohmann::json& j);

  double intercept() const { return beta_[0]; }
  /// Slopes, one per feature.
  std::span<const double> slopes() const { return {beta_.data() + 1, beta_.size() - 1}; }
  /// Residual standard error with `df()` degrees of freedom.
  double residual_se() const { return sigma_; }
  double df() const { return df_; }
  /// Standard error of the fitted mean at x: sigma * sqrt(x~' (X~'X~)^-1 x~).
  double mean_se(std::span<const double> x) const;
  bool ridge_fallback() const { return !flag_.empty(); }

 private:
  friend OlsModel fit_ols(const Matrix&, std::span<const double>, bool);
  std::vector<double> beta_;
  std::vector<double> xtx_inv_;
  double sigma_ = 0.0;
  double df_ = 0.0;
};

/// Least squares with intercept. When the design is rank deficient and
/// `ridge_fallback` is set, a 1e-8 ridge on the slopes is used and the model
/// is flagged; otherwise NumericalError.
OlsModel fit_ols(const Matrix& X, std::span<const double> y, bool ridge_fallback = true);
inline OlsModel fit_ols(const Dataset& d, bool ridge_fallback = true) { return fit_ols(d.X, d.y, ridge_fallback); }

class LinearQuantileModel final : public Model {
 public:
  double predict(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  static std::shared_ptr<LinearQuantileModel> from_json(const nlohmann::json& j);
  double intercept() const { return beta_[0]; }
  std::span<const double> slopes() const { return {beta_.data() + 1, beta_.size() - 1}; }
  int iterations() const { return iterations_; }

 private:
  friend ModelPtr fit_linear_quantile(const Matrix&, std::span<const double>, std::span<const double>, double);
  std::vector<double> beta_;
  int iterations_ = 0;
};

/// Linear tau-quantile regression with intercept: minimizes the weighted
/// pinball loss by iteratively reweighted least squares.
ModelPtr fit_linear_quantile(const Matrix& X, std::span<const double> y, std::span<const double> weights, double tau);

/// Sum of w * pinball_tau(y - f).
double pinball_loss(std::span<const double> y, std::span<const double> f, double tau,
                    std::span<const double> weights = {});

class KnnModel final : public Model {
 public:
  double predict(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  static std::shared_ptr<KnnModel> from_json(const nlohmann::json& j);
  int k() const { return k_; }

 private:
  friend KnnModel fit_knn(const Matrix&, std::span<const double>, int);
  Matrix X_;
  std::vector<double> y_;
  int k_ = 1;
};

/// Mean response of the k nearest rows (Euclidean); distance ties go to the
/// lower row index.
KnnModel fit_knn(const Matrix& X, std::span<const double> y, int k);
inline KnnModel fit_knn(const Dataset& d, int k) { return fit_knn(d.X, d.y, k); }

struct ForestParams {
  int trees = 100;
  int max_depth = -1;
  int min_leaf = 1;
  int max_features = 0;
  bool bootstrap = true;
  bool retain_samples = true;
};

class Forest final : public Model {
 public:
  Forest() = default;
  /// Assemble from already grown trees (leaf samples must be retained for
  /// quantile prediction).
  explicit Forest(std::vector<RegressionTree> trees);

  double predict(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  static std::shared_ptr<Forest> from_json(const nlohmann::json& j);

  const std::vector<RegressionTree>& trees() const { return trees_; }
  const std::vector<std::uint64_t>& tree_seeds() const { return tree_seeds_; }

 private:
  friend Forest fit_forest(const Matrix&, std::span<const double>, std::span<const double>, const ForestParams&,
                           RngStream);
  std::vector<RegressionTree> trees_;
  std::vector<std::uint64_t> tree_seeds_;
};

/// Each tree is grown on its own bootstrap resample drawn from
/// `rng.derive("tree", b)`.
Forest fit_forest(const Matrix& X, std::span<const double> y, std::span<const double> weights,
                  const ForestParams& params, RngStream rng);
inline Forest fit_forest(const Dataset& d, const ForestParams& params, RngStream rng) {
  return fit_forest(d.X, d.y, {}, params, rng);
}

/// Quantile of the pooled leaf samples reached by x, each weighted
/// 1 / (B * |leaf|).
double forest_quantile_predict(const Forest& f, std::span<const double> x, double tau);

struct GbtParams {
  GbtLoss loss = GbtLoss::Squared;
  double tau = 0.5;
  int trees = 100;
  double lr = 0.1;
  int max_depth = 3;
  int min_leaf = 1;
};

class GbtModel final : public Model {
 public:
  double predict(std::span<const double> x) const override;
  /// Additive score before the link.
  double raw(std::span<const double> x) const;
  nlohmann::json to_json() const override;
  static std::shared_ptr<GbtModel> from_json(const nlohmann::json& j);

  GbtLoss loss() const { return loss_; }
  double tau() const { return tau_; }
  double init() const { return init_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }

 private:
  friend ModelPtr fit_gbt(const Matrix&, std::span<const double>, std::span<const double>, const GbtParams&,
                          RngStream);
  GbtLoss loss_ = GbtLoss::Squared;
  double tau_ = 0.5;
  double init_ = 0.0;
  std::vector<RegressionTree> trees_;
};

/// Stagewise boosting. Each stage grows a tree on the negative gradient and
/// then resets every leaf to the loss-optimal step for the rows it holds.
/// A single-class logistic target yields a flagged ConstantModel.
ModelPtr fit_gbt(const Matrix& X, std::span<const double> y, std::span<const double> weights,
                 const GbtParams& params, RngStream rng);

class LogisticModel final : public Model {
 public:
  double predict(std::span<const double> x) const override;
  double linear(std::span<const double> x) const;
  nlohmann::json to_json() const override;
  static std::shared_ptr<LogisticModel> from_json(const nlohmann::json& j);

  double intercept() const { return beta_[0]; }
  std::span<const double> slopes() const { return {beta_.data() + 1, beta_.size() - 1}; }
  int iterations() const { return iterations_; }

 private:
  friend ModelPtr fit_logistic(const Matrix&, std::span<const double>, std::span<const double>, double);
  std::vector<double> beta_;
  int iterations_ = 0;
};

/// Maximizes sum_i w_i loglik_i - (l2 / 2) * |slopes|^2 by damped Newton
/// (gradient tolerance 1e-8 times the total weight, at most 500 iterations,
/// stops early once no step raises the objective). A single-class target
/// yields a flagged ConstantModel.
ModelPtr fit_logistic(const Matrix& X, std::span<const double> y, std::span<const double> weights, double l2);

/// Penalized log-likelihood and its gradient with respect to
/// (intercept, slopes); exposed for verification.
double logistic_objective(const Matrix& X, std::span<const double> y, std::span<const double> weights, double l2,
                          std::span<const double> beta, std::vector<double>* gradient = nullptr);

/// Fits any family except Auto. `weights` may be empty.
ModelPtr fit_model(const LearnerConfig& config, const Matrix& X, std::span<const double> y,
                   std::span<const double> weights, RngStream rng);
ModelPtr model_from_json(const nlohmann::json& j);

/// Inverse class-frequency weights for a 0/1 label vector, normalized to
/// average 1.
std::vector<double> inverse_frequency_weights(std::span<const double> labels);

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
double clamp_probability(double p);

}  // namespace cpa
