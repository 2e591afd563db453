#pragma once

#include "cpa/dataset.hpp"

namespace cpa {

/// Standard normal CDF through erfc (relative accuracy near machine epsilon).
double normal_cdf(double x);
/// Inverse standard normal CDF: rational initial guess refined by Halley steps.
double normal_quantile(double p);

/// Student-t CDF with 2 degrees of freedom: 1/2 + t / (2 sqrt(2 + t^2)).
double student_t2_cdf(double t);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// Bisection on student_t_cdf to an absolute tolerance of 1e-10 in t.
double student_t_quantile(double p, double df);

/// CDF of the standardized noise of a family.
double noise_cdf(NoiseFamily family, double z);
double noise_quantile(NoiseFamily family, double p);

}  // namespace cpa
