#pragma once

#include <span>
#include <vector>

#include "cpa/learners/models.hpp"

namespace cpa {

enum class Task { Regression, Classification, Quantile };

struct SelectionResult {
  std::size_t index = 0;
  LearnerConfig config;
  /// Mean out-of-fold loss per candidate (empty when only one candidate).
  std::vector<double> cv_loss;
  int folds = 0;
};

/// K-fold model selection. Regression minimizes MSE over plain folds;
/// classification minimizes unweighted log-loss of clamped probabilities over
/// stratified folds, training with inverse class-frequency weights, and uses
/// max(2, min(folds, minority count)) folds. Quantile minimizes the mean
/// pinball loss at `tau` over plain folds. Ties go to the earlier candidate.
SelectionResult select_learner(const Matrix& X, std::span<const double> y, std::span<const LearnerConfig> candidates,
                               int folds, RngStream rng, Task task, double tau = 0.5);

std::vector<LearnerConfig> default_classifier_grid();
std::vector<LearnerConfig> default_regressor_grid();
/// Linear quantile regression and a small pinball-loss boosted ensemble, both at tau.
std::vector<LearnerConfig> default_quantile_grid(double tau);

/// Unweighted mean log-loss with probabilities clamped to [1e-6, 1 - 1e-6].
double log_loss(std::span<const double> labels, std::span<const double> probs);

}  // namespace cpa
