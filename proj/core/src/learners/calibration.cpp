#include "cpa/learners/calibration.hpp"

#include <algorithm>
#include <numeric>

#include "cpa/error.hpp"
#include "cpa/learners/models.hpp"

namespace cpa {

namespace {
void check(std::span<const double> scores, std::span<const double> labels, const char* who) {
  if (scores.empty()) throw DataError(std::string(who) + ": no calibration points");
  if (scores.size() != labels.size()) throw ConfigError(std::string(who) + ": scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError(std::string(who) + ": non-finite score");
}

std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  return idx;
}
}  // namespace

std::string CalibrationSpec::to_string() const {
  switch (method) {
    case CalibrationMethod::None: return "none";
    case CalibrationMethod::Isotonic: return "isotonic";
    case CalibrationMethod::Platt: return "platt";
    case CalibrationMethod::Binning: return "binning:" + std::to_string(bins);
  }
  return "?";
}

CalibrationSpec CalibrationSpec::parse(const std::string& text) {
  CalibrationSpec s;
  if (text == "none")
    s.method = CalibrationMethod::None;
  else if (text == "isotonic")
    s.method = CalibrationMethod::Isotonic;
  else if (text == "platt" || text == "sigmoid")
    s.method = CalibrationMethod::Platt;
  else if (text.rfind("binning", 0) == 0) {
    s.method = CalibrationMethod::Binning;
    if (text.size() > 7) {
      if (text[7] != ':') throw ConfigError("calibration '" + text + "': expected binning:B");
      try {
        s.bins = std::stoi(text.substr(8));
      } catch (const std::exception&) {
        throw ConfigError("calibration '" + text + "': bad bin count");
      }
    }
    if (s.bins < 1) throw ConfigError("calibration binning needs at least one bin");
  } else {
    throw ConfigError("unknown calibration method '" + text + "'");
  }
  return s;
}

std::vector<double> pava(std::span<const double> values, std::span<const double> weights) {
  struct Block {
    double sum, weight;
    std::size_t count;
  };
  std::vector<Block> stack;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    stack.push_back({w * values[i], w, 1});
    while (stack.size() > 1) {
      const Block& b = stack.back();
      const Block& a = stack[stack.size() - 2];
      // a.mean > b.mean, cross-multiplied to avoid division.
      if (a.sum * b.weight <= b.sum * a.weight) break;
      Block merged{a.sum + b.sum, a.weight + b.weight, a.count + b.count};
      stack.pop_back();
      stack.back() = merged;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& b : stack) out.insert(out.end(), b.count, b.sum / b.weight);
  return out;
}

double Calibrator::step_value(double s) const {
  auto it = std::lower_bound(knots_.begin(), knots_.end(), s);
  if (it == knots_.end()) return values_.back();
  return values_[static_cast<std::size_t>(it - knots_.begin())];
}

double Calibrator::apply(double s) const {
  if (constant_) return values_.front();
  switch (method_) {
    case CalibrationMethod::None: return std::clamp(s, 0.0, 1.0);
    case CalibrationMethod::Isotonic:
    case CalibrationMethod::Binning: return step_value(s);
    case CalibrationMethod::Platt: return sigmoid(a_ * s + b_);
  }
  return s;
}

Calibrator Calibrator::identity() { return {}; }

Calibrator Calibrator::constant(double value, std::string flag) {
  Calibrator c;
  c.constant_ = true;
  c.values_ = {value};
  c.flag_ = std::move(flag);
  return c;
}

Calibrator fit_isotonic(std::span<const double> scores, std::span<const double> labels) {
  check(scores, labels, "fit_isotonic");
  const auto idx = score_order(scores);
  // Pool tied scores so the fitted map is a function of the score.
  std::vector<double> tie_score, tie_mean, tie_weight;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double s = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) s += labels[idx[j++]];
    tie_score.push_back(scores[idx[i]]);
    tie_mean.push_back(s / static_cast<double>(j - i));
    tie_weight.push_back(static_cast<double>(j - i));
    i = j;
  }
  const auto fitted = pava(tie_mean, tie_weight);
  Calibrator c;
  c.method_ = CalibrationMethod::Isotonic;
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    if (i + 1 < fitted.size() && fitted[i + 1] == fitted[i]) continue;
    c.knots_.push_back(tie_score[i]);
    c.values_.push_back(fitted[i]);
  }
  return c;
}

Calibrator fit_platt(std::span<const double> scores, std::span<const double> labels) {
  check(scores, labels, "fit_platt");
  Matrix X(scores.size(), 1);
  for (std::size_t i = 0; i < scores.size(); ++i) X(i, 0) = scores[i];
  auto m = fit_logistic(X, labels, {}, 0.0);
  if (auto* k = dynamic_cast<const ConstantModel*>(m.get())) return Calibrator::constant(k->value(), k->flag());
  const auto& lm = dynamic_cast<const LogisticModel&>(*m);
  Calibrator c;
  c.method_ = CalibrationMethod::Platt;
  c.a_ = lm.slopes()[0];
  c.b_ = lm.intercept();
  return c;
}

Calibrator fit_binning(std::span<const double> scores, std::span<const double> labels, int bins) {
  check(scores, labels, "fit_binning");
  if (bins < 1) throw ConfigError("fit_binning: need at least one bin");
  const auto idx = score_order(scores);
  const std::size_t n = idx.size(), B = static_cast<std::size_t>(bins);
  Calibrator c;
  c.method_ = CalibrationMethod::Binning;
  // Bins are index ranges of the sorted scores; with B > n some are empty
  // and never reached, so only the occupied ones are stored.
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t lo = b * n / B, hi = (b + 1) * n / B;
    if (lo == hi) continue;
    double s = 0;
    for (std::size_t i = lo; i < hi; ++i) s += labels[idx[i]];
    c.knots_.push_back(scores[idx[hi - 1]]);
    c.values_.push_back(s / static_cast<double>(hi - lo));
  }
  return c;
}

Calibrator fit_calibrator(const CalibrationSpec& spec, std::span<const double> scores,
                          std::span<const double> labels) {
  switch (spec.method) {
    case CalibrationMethod::None: return Calibrator::identity();
    case CalibrationMethod::Isotonic: return fit_isotonic(scores, labels);
    case CalibrationMethod::Platt: return fit_platt(scores, labels);
    case CalibrationMethod::Binning: return fit_binning(scores, labels, spec.bins);
  }
  return Calibrator::identity();
}

nlohmann::json Calibrator::to_json() const {
  const char* m = "none";
  switch (method_) {
    case CalibrationMethod::None: break;
    case CalibrationMethod::Isotonic: m = "isotonic"; break;
    case CalibrationMethod::Platt: m = "platt"; break;
    case CalibrationMethod::Binning: m = "binning"; break;
  }
  return {{"method", m}, {"knots", knots_}, {"values", values_}, {"a", a_},
          {"b", b_},     {"constant", constant_}, {"flag", flag_}};
}

Calibrator Calibrator::from_json(const nlohmann::json& j) {
  Calibrator c;
  const auto m = j.at("method").get<std::string>();
  c.method_ = m == "isotonic" ? CalibrationMethod::Isotonic
              : m == "platt"  ? CalibrationMethod::Platt
              : m == "binning" ? CalibrationMethod::Binning
                               : CalibrationMethod::None;
  c.knots_ = j.at("knots").get<std::vector<double>>();
  c.values_ = j.at("values").get<std::vector<double>>();
  c.a_ = j.at("a").get<double>();
  c.b_ = j.at("b").get<double>();
  c.constant_ = j.at("constant").get<bool>();
  c.flag_ = j.value("flag", std::string());
  return c;
}

}  // namespace cpa
