#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpa/conformal.hpp"
#include "cpa/matrix.hpp"
#include "cpa/rng.hpp"

namespace cpa {

struct CviReport {
  double cvi = 0, cvi_u = 0, cvi_o = 0;
  double pi_minus = 0, pi_plus = 0;
  double cmu = 0, cmo = 0;
  double alpha = 0.1, gamma = 0.02;
  std::size_t n_eval = 0;

  nlohmann::json to_json() const;
};

/// Mean absolute deviation of the reliability values from 1 - alpha, its
/// under/over split, and the gamma-tolerant rates and conditional means.
CviReport cvi_report(std::span<const double> etas, double alpha, double gamma = 0.02);

struct CvpCurve {
  std::vector<double> p;
  std::vector<double> q;
  double target = 0.9;

  /// Mean of (target - q)+ over the grid; equals cvi_u.
  double area_below() const;
  /// Mean of (q - target)+ over the grid; equals cvi_o.
  double area_above() const;
  /// Smallest grid p with q(p) >= target (1 when never reached).
  double crossing() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Empirical quantile function Q(p) = eta_(ceil(p n)) on p = 1/n, ..., 1.
CvpCurve cvp_curve(std::span<const double> etas, double alpha);

/// Integral of |Q_a(p) - Q_b(p)| over (0, 1]; for equal sizes this is the
/// mean absolute difference of the sorted values.
double cvp_w1(std::span<const double> etas_a, std::span<const double> etas_b);

struct MarginalStats {
  double coverage = 0;
  double avg_length = 0;
  /// Some interval had infinite width.
  bool infinite_length = false;
  nlohmann::json to_json() const;
};

MarginalStats marginal_stats(std::span<const Interval> intervals, std::span<const double> y);
MarginalStats marginal_stats(const IntervalPredictor& pred, const Dataset& test);

/// Closed-interval coverage indicators.
std::vector<double> coverage_labels(std::span<const Interval> intervals, std::span<const double> y);

struct DiagramBin {
  std::size_t count = 0;
  double mean_confidence = 0;
  double accuracy = 0;
};

struct DiagramBins {
  std::vector<DiagramBin> bins;
  double ece = 0;
  void write_csv(const std::filesystem::path& path) const;
};

/// Equal-frequency bins over the predictions sorted ascending (index cuts).
DiagramBins reliability_diagram(std::span<const double> etas, std::span<const double> labels, int bins);

enum class WscVariant { InSample, Split };

struct WscResult {
  double value = 1.0;
  std::vector<double> direction;
  double a = 0, b = 0;
  WscVariant variant = WscVariant::InSample;
  /// Points in the reported slab (on the evaluation half for Split).
  std::size_t mass = 0;
  bool flagged = false;
  nlohmann::json to_json() const;
};

/// Worst coverage over slabs {a <= v'x <= b} holding at least ceil(delta n)
/// points, minimized over `n_directions` random unit directions. Direction d
/// is drawn from rng.derive("direction", d), so adding directions never
/// changes earlier ones.
WscResult wsc(const Matrix& X, std::span<const double> covered, double delta, int n_directions, RngStream rng,
              WscVariant variant = WscVariant::InSample);

/// Item indices sorted by ascending score; ties keep index order.
std::vector<std::size_t> ranking_from_scores(std::span<const double> scores);

/// Distance-weighted Kendall tau between the ranking implied by ascending
/// d_true and `rank_est` (item indices, best first). All-equal d gives 0 and
/// sets *degenerate.
double weighted_kendall_tau(std::span<const double> d_true, std::span<const std::size_t> rank_est,
                            bool* degenerate = nullptr);
double ndcg_at_k(std::span<const double> d_true, std::span<const std::size_t> rank_est, std::size_t k);
double hit_at_k(std::span<const std::size_t> rank_true, std::span<const std::size_t> rank_est, std::size_t k);

}  // namespace cpa
