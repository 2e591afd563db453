#include "cpa/learners/selection.hpp"

#include <algorithm>
#include <cmath>

#include "cpa/error.hpp"

namespace cpa {

double log_loss(std::span<const double> labels, std::span<const double> probs) {
  double s = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = clamp_probability(probs[i]);
    s -= labels[i] > 0.5 ? std::log(p) : std::log1p(-p);
  }
  return s / static_cast<double>(labels.size());
}

std::vector<LearnerConfig> default_classifier_grid() {
  std::vector<LearnerConfig> g;
  for (double l2 : {0.01, 1.0}) g.push_back(LearnerConfig::logistic(l2));
  for (int trees : {100, 300})
    for (int depth : {-1, 6}) g.push_back(LearnerConfig::forest(trees, depth));
  for (int trees : {100, 200})
    for (double lr : {0.05, 0.1})
      for (int depth : {3, 5}) g.push_back(LearnerConfig::gbt(GbtLoss::Logistic, trees, lr, depth));
  return g;
}

std::vector<LearnerConfig> default_regressor_grid() {
  std::vector<LearnerConfig> g;
  g.push_back(LearnerConfig::ols());
  for (int k : {5, 20}) g.push_back(LearnerConfig::knn(k));
  for (int depth : {-1, 10}) {
    auto f = LearnerConfig::forest(200, depth);
    f.max_features = -1;
    g.push_back(f);
  }
  return g;
}

std::vector<LearnerConfig> default_quantile_grid(double tau) {
  return {LearnerConfig::linear_quantile(tau), LearnerConfig::gbt(GbtLoss::Pinball, 100, 0.1, 3, tau)};
}

SelectionResult select_learner(const Matrix& X, std::span<const double> y, std::span<const LearnerConfig> candidates,
                               int folds, RngStream rng, Task task, double tau) {
  if (candidates.empty()) throw ConfigError("select_learner: no candidates");
  if (folds < 2) throw ConfigError("select_learner: folds must be >= 2");
  SelectionResult res;
  res.config = candidates[0];
  if (candidates.size() == 1) return res;

  const std::size_t n = X.rows();
  std::vector<std::vector<std::size_t>> fold_rows;
  if (task == Task::Classification) {
    std::size_t ones = 0;
    for (double v : y) ones += v > 0.5 ? 1 : 0;
    const std::size_t minority = std::min(ones, n - ones);
    res.folds = std::max<int>(2, std::min<int>(folds, static_cast<int>(minority)));
    fold_rows = stratified_kfold(y, res.folds, rng.derive("folds"));
  } else {
    res.folds = folds;
    fold_rows = kfold(n, folds, rng.derive("folds"));
  }

  std::vector<double> oof(n);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const LearnerConfig& cfg = candidates[c];
    if (cfg.family == LearnerFamily::Auto) throw ConfigError("select_learner: 'auto' is not a candidate");
    const RngStream crng = rng.derive(cfg.to_string());
    for (std::size_t f = 0; f < fold_rows.size(); ++f) {
      const auto train = complement(n, fold_rows[f]);
      const Matrix Xt = X.select_rows(train);
      std::vector<double> yt(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) yt[i] = y[train[i]];
      std::vector<double> w;
      if (task == Task::Classification) w = inverse_frequency_weights(yt);
      const auto model = fit_model(cfg, Xt, yt, w, crng.derive("fold", f));
      for (auto i : fold_rows[f]) oof[i] = model->predict(X.row(i));
    }
    double loss = 0;
    if (task == Task::Classification) {
      loss = log_loss(y, oof);
    } else if (task == Task::Quantile) {
      loss = pinball_loss(y, oof, tau) / static_cast<double>(n);
    } else {
      for (std::size_t i = 0; i < n; ++i) loss += (y[i] - oof[i]) * (y[i] - oof[i]);
      loss /= static_cast<double>(n);
    }
    res.cv_loss.push_back(loss);
  }
  res.index = static_cast<std::size_t>(std::min_element(res.cv_loss.begin(), res.cv_loss.end()) - res.cv_loss.begin());
  res.config = candidates[res.index];
  return res;
}

}  // namespace cpa
