#pragma once

#include <span>

namespace cpa {

/// Split-conformal threshold: the k-th smallest score, k = ceil((n + 1)(1 - alpha)).
/// Returns +inf when k > n.
double conformal_quantile(std::span<const double> scores, double alpha);

/// Order-statistic index used by conformal_quantile (1-based, may exceed n).
std::size_t conformal_rank(std::size_t n, double alpha);

/// Smallest v with sum_{values <= v} w / sum w >= tau.
double weighted_quantile(std::span<const double> values, std::span<const double> weights, double tau);

/// Same convention for values already sorted ascending; O(n).
double weighted_quantile_sorted(std::span<const double> sorted_values, std::span<const double> weights,
                                double tau);

/// Unweighted version of the same convention.
double empirical_quantile(std::span<const double> values, double tau);

}  // namespace cpa
