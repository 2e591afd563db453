#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cpa {

enum class CalibrationMethod { None, Isotonic, Platt, Binning };

struct CalibrationSpec {
  CalibrationMethod method = CalibrationMethod::Isotonic;
  int bins = 10;

  /// "none", "isotonic", "platt", "binning" or "binning:B".
  std::string to_string() const;
  static CalibrationSpec parse(const std::string& text);
  bool operator==(const CalibrationSpec&) const = default;
};

/// Map from a raw classifier score to a probability in [0, 1].
class Calibrator {
 public:
  Calibrator() = default;
  double apply(double s) const;
  CalibrationMethod method() const { return method_; }

  /// Step knots (isotonic, binning): value i holds for scores in
  /// (knot[i-1], knot[i]]; scores beyond either end take the end value.
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }
  /// Platt parameters of sigmoid(a * s + b).
  double a() const { return a_; }
  double b() const { return b_; }
  const std::string& flag() const { return flag_; }

  nlohmann::json to_json() const;
  static Calibrator from_json(const nlohmann::json& j);

  static Calibrator identity();
  static Calibrator constant(double value, std::string flag);

 private:
  friend Calibrator fit_isotonic(std::span<const double>, std::span<const double>);
  friend Calibrator fit_platt(std::span<const double>, std::span<const double>);
  friend Calibrator fit_binning(std::span<const double>, std::span<const double>, int);
  double step_value(double s) const;

  CalibrationMethod method_ = CalibrationMethod::None;
  std::vector<double> knots_;
  std::vector<double> values_;
  double a_ = 1.0;
  double b_ = 0.0;
  bool constant_ = false;
  std::string flag_;
};

/// Pool-adjacent-violators fit of a non-decreasing step function.
Calibrator fit_isotonic(std::span<const double> scores, std::span<const double> labels);
/// One-dimensional logistic fit of the labels on the scores.
Calibrator fit_platt(std::span<const double> scores, std::span<const double> labels);
/// Equal-frequency bins over the sorted scores; each bin maps to its label mean.
Calibrator fit_binning(std::span<const double> scores, std::span<const double> labels, int bins);
Calibrator fit_calibrator(const CalibrationSpec& spec, std::span<const double> scores,
                          std::span<const double> labels);

/// Block means of the isotonic least-squares fit, one per input in score
/// order (ties pooled first). Exposed for verification.
std::vector<double> pava(std::span<const double> values, std::span<const double> weights);

}  // namespace cpa
