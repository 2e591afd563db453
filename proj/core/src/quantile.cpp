#include "cpa/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cpa/error.hpp"

namespace cpa {

std::size_t conformal_rank(std::size_t n, double alpha) {
  // The small offset keeps products like 10 * 0.9 from rounding up past an integer.
  const double target = static_cast<double>(n + 1) * (1.0 - alpha);
  return static_cast<std::size_t>(std::ceil(target - 1e-10));
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw NumericalError("conformal_quantile: empty score set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("conformal_quantile: alpha must lie in (0, 1)");
  const std::size_t k = conformal_rank(scores.size(), alpha);
  if (k > scores.size()) return std::numeric_limits<double>::infinity();
  std::vector<double> s(scores.begin(), scores.end());
  const std::size_t idx = k == 0 ? 0 : k - 1;
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(idx), s.end());
  return s[idx];
}

double weighted_quantile_sorted(std::span<const double> sorted_values, std::span<const double> weights,
                                double tau) {
  if (sorted_values.size() != weights.size()) throw ConfigError("weighted_quantile: length mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("weighted_quantile: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw NumericalError("weighted_quantile: weights sum to zero");
  double cum = 0.0;
  for (std::size_t i = 0; i < sorted_values.size(); ++i) {
    cum += weights[i];
    if (cum / total >= tau) return sorted_values[i];
  }
  return sorted_values.back();
}

double weighted_quantile(std::span<const double> values, std::span<const double> weights, double tau) {
  if (values.empty()) throw NumericalError("weighted_quantile: empty input");
  if (values.size() != weights.size()) throw ConfigError("weighted_quantile: length mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("weighted_quantile: tau must lie in (0, 1)");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> v(values.size()), w(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    v[i] = values[order[i]];
    w[i] = weights[order[i]];
  }
  return weighted_quantile_sorted(v, w, tau);
}

double empirical_quantile(std::span<const double> values, double tau) {
  std::vector<double> w(values.size(), 1.0);
  return weighted_quantile(values, w, tau);
}

}  // namespace cpa
