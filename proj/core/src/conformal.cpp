#include "cpa/conformal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>

#include "cpa/distributions.hpp"
#include "cpa/error.hpp"
#include "cpa/json_number.hpp"
#include "cpa/learners/selection.hpp"

namespace cpa {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::map<MethodKind, std::string>& kind_names() {
  static const std::map<MethodKind, std::string> m = {
      {MethodKind::CpResidual, "cp-residual"}, {MethodKind::CpStudentized, "cp-studentized"},
      {MethodKind::Cqr, "cqr"},                {MethodKind::CvPlus, "cv-plus"},
      {MethodKind::Lcp, "lcp"},                {MethodKind::Rlcp, "rlcp"},
      {MethodKind::Bootstrap, "bootstrap"},    {MethodKind::Qrf, "qrf"},
      {MethodKind::OlsT, "ols"},               {MethodKind::CoverAll, "cover-all"},
      {MethodKind::ZeroWidth, "zero-width"},   {MethodKind::OracleStub, "oracle-stub"}};
  return m;
}

std::uint64_t hash_point(std::span<const double> x) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (double v : x) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
  return h;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

void require_rows(const Dataset& d, const char* who, const char* what) {
  if (d.size() == 0) throw DataError(std::string(who) + ": empty " + what + " set");
}

std::vector<double> residual_scores(const Model& m, const Dataset& d) {
  std::vector<double> s(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) s[i] = std::abs(d.y[i] - m.predict(d.X.row(i)));
  return s;
}

nlohmann::json rng_json(const RngStream& r) { return {{"seed", r.seed()}, {"stream", r.stream_id()}}; }
RngStream rng_from(const nlohmann::json& j) {
  return RngStream(j.at("seed").get<std::uint64_t>(), j.at("stream").get<std::uint64_t>());
}

LearnerConfig resolve(const LearnerConfig& c, const Dataset& train, RngStream rng) {
  if (c.family != LearnerFamily::Auto) return c;
  const auto grid = default_regressor_grid();
  return select_learner(train.X, train.y, grid, 5, rng, Task::Regression).config;
}

std::size_t lower_rank(std::size_t n, double alpha) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n + 1) * alpha + 1e-10));
}

}  // namespace

// ---------------------------------------------------------------- config

std::string method_name(MethodKind kind) { return kind_names().at(kind); }

MethodKind method_kind_from(const std::string& name) {
  for (const auto& [k, v] : kind_names())
    if (v == name) return k;
  throw ConfigError("unknown interval method '" + name + "'");
}

LearnerConfig MethodConfig::default_qrf_forest() {
  auto f = LearnerConfig::forest(200, -1, 5);
  f.max_features = -1;
  return f;
}

MethodConfig MethodConfig::of(MethodKind kind) {
  MethodConfig c;
  c.kind = kind;
  if (kind == MethodKind::Lcp || kind == MethodKind::Rlcp) {
    c.base = LearnerConfig::forest(200, -1);
    c.base.max_features = -1;
  }
  if (kind == MethodKind::ZeroWidth) c.base = LearnerConfig::ols();
  return c;
}

std::string MethodConfig::name() const { return method_name(kind); }

bool MethodConfig::is_conformal() const {
  switch (kind) {
    case MethodKind::CpResidual:
    case MethodKind::CpStudentized:
    case MethodKind::Cqr:
    case MethodKind::CvPlus:
    case MethodKind::Lcp:
    case MethodKind::Rlcp: return true;
    default: return false;
  }
}

bool MethodConfig::is_fixture() const {
  return kind == MethodKind::CoverAll || kind == MethodKind::ZeroWidth || kind == MethodKind::OracleStub;
}

std::string MethodConfig::to_string() const {
  std::string s = name();
  auto add = [&](const std::string& k, const std::string& v) { s += ";" + k + "=" + v; };
  switch (kind) {
    case MethodKind::CpResidual:
    case MethodKind::ZeroWidth:
      add("base", base.to_string());
      if (kind == MethodKind::CpResidual) add("calib", format_double(calib_fraction));
      break;
    case MethodKind::CpStudentized:
      add("base", base.to_string());
      add("dispersion", dispersion.to_string());
      add("calib", format_double(calib_fraction));
      break;
    case MethodKind::Cqr:
      add("quantile", quantile.to_string());
      add("calib", format_double(calib_fraction));
      break;
    case MethodKind::CvPlus:
      add("base", base.to_string());
      add("folds", std::to_string(folds));
      break;
    case MethodKind::Lcp:
      add("base", base.to_string());
      add("calib", format_double(calib_fraction));
      add("bandwidth", bandwidth > 0 ? format_double(bandwidth) : "auto");
      break;
    case MethodKind::Rlcp:
      add("base", base.to_string());
      add("calib", format_double(calib_fraction));
      add("bandwidth", bandwidth > 0 ? format_double(bandwidth) : "auto");
      add("draws", std::to_string(draws));
      if (suppress_noise) add("suppress_noise", "1");
      break;
    case MethodKind::Bootstrap:
      add("base", base.to_string());
      add("resamples", std::to_string(resamples));
      add("folds", std::to_string(folds));
      break;
    case MethodKind::Qrf: add("forest", forest.to_string()); break;
    case MethodKind::OlsT:
    case MethodKind::CoverAll:
    case MethodKind::OracleStub: break;
  }
  return s;
}

MethodConfig MethodConfig::parse(const std::string& text) {
  const auto semi = text.find(';');
  MethodConfig c = of(method_kind_from(text.substr(0, semi)));
  if (semi == std::string::npos) return c;
  std::size_t pos = semi + 1;
  while (pos <= text.size()) {
    const auto next = text.find(';', pos);
    const std::string item = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    pos = next == std::string::npos ? text.size() + 1 : next + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("method option '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), v = item.substr(eq + 1);
    auto num = [&] {
      try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
      } catch (const std::exception&) {
        throw ConfigError("method option " + key + ": expected a number, got '" + v + "'");
      }
    };
    if (key == "base")
      c.base = LearnerConfig::parse(v);
    else if (key == "dispersion")
      c.dispersion = LearnerConfig::parse(v);
    else if (key == "quantile")
      c.quantile = LearnerConfig::parse(v);
    else if (key == "forest")
      c.forest = LearnerConfig::parse(v);
    else if (key == "calib")
      c.calib_fraction = num();
    else if (key == "folds")
      c.folds = static_cast<int>(num());
    else if (key == "bandwidth")
      c.bandwidth = v == "auto" ? 0.0 : num();
    else if (key == "draws")
      c.draws = static_cast<int>(num());
    else if (key == "resamples")
      c.resamples = static_cast<int>(num());
    else if (key == "epsilon")
      c.epsilon = num();
    else if (key == "suppress_noise")
      c.suppress_noise = num() != 0;
    else
      throw ConfigError("unknown method option '" + key + "'");
  }
  return c;
}

nlohmann::json MethodConfig::to_json() const {
  return {{"kind", name()},
          {"base", base.to_json()},
          {"dispersion", dispersion.to_json()},
          {"quantile", quantile.to_json()},
          {"forest", forest.to_json()},
          {"calib_fraction", calib_fraction},
          {"folds", folds},
          {"bandwidth", bandwidth},
          {"draws", draws},
          {"resamples", resamples},
          {"epsilon", epsilon},
          {"suppress_noise", suppress_noise}};
}

MethodConfig MethodConfig::from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse(j.get<std::string>());
  MethodConfig c = of(method_kind_from(j.at("kind").get<std::string>()));
  if (j.contains("base")) c.base = LearnerConfig::from_json(j["base"]);
  if (j.contains("dispersion")) c.dispersion = LearnerConfig::from_json(j["dispersion"]);
  if (j.contains("quantile")) c.quantile = LearnerConfig::from_json(j["quantile"]);
  if (j.contains("forest")) c.forest = LearnerConfig::from_json(j["forest"]);
  c.calib_fraction = j.value("calib_fraction", c.calib_fraction);
  c.folds = j.value("folds", c.folds);
  c.bandwidth = j.value("bandwidth", c.bandwidth);
  c.draws = j.value("draws", c.draws);
  c.resamples = j.value("resamples", c.resamples);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.suppress_noise = j.value("suppress_noise", c.suppress_noise);
  return c;
}

// ---------------------------------------------------------------- base

std::vector<Interval> IntervalPredictor::predict(const Matrix& X) const {
  std::vector<Interval> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i));
  return out;
}

nlohmann::json IntervalPredictor::to_json() const {
  nlohmann::json j = {{"method", config_.to_json()}, {"alpha", alpha_}, {"flags", flags_}};
  write(j);
  return j;
}

// ---------------------------------------------------------------- split / studentized

SplitPredictor::SplitPredictor(MethodConfig config, double alpha, ModelPtr mean, ModelPtr scale, double threshold,
                               std::vector<double> scores)
    : IntervalPredictor(std::move(config), alpha),
      mean_(std::move(mean)),
      scale_(std::move(scale)),
      q_(threshold),
      scores_(std::move(scores)) {}

double SplitPredictor::spread(std::span<const double> x) const {
  return std::max(0.0, scale_->predict(x)) + config_.epsilon;
}

Interval SplitPredictor::predict(std::span<const double> x) const {
  const double m = mean_->predict(x);
  if (std::isinf(q_)) return {-kInf, kInf};
  const double half = scale_ ? q_ * spread(x) : q_;
  return {m - half, m + half};
}

void SplitPredictor::write(nlohmann::json& j) const {
  j["mean"] = mean_->to_json();
  if (scale_) j["scale"] = scale_->to_json();
  j["threshold"] = json_number(q_);
  j["scores"] = scores_;
}

ModelPtr fit_regressor(const LearnerConfig& config, const Dataset& train, RngStream rng) {
  require_rows(train, "fit_regressor", "training");
  const LearnerConfig c = resolve(config, train, rng.derive("select"));
  return fit_model(c, train.X, train.y, {}, rng.derive("fit"));
}

PredictorPtr fit_cp_residual(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                             RngStream rng) {
  require_rows(train, "cp-residual", "training");
  require_rows(calib, "cp-residual", "calibration");
  auto mean = fit_regressor(config.base, train, rng.derive("mean"));
  auto scores = residual_scores(*mean, calib);
  const double q = conformal_quantile(scores, alpha);
  MethodConfig c = config;
  c.kind = MethodKind::CpResidual;
  auto p = std::make_shared<SplitPredictor>(c, alpha, mean, nullptr, q, std::move(scores));
  return p;
}

PredictorPtr fit_cp_studentized(const Dataset& train, const Dataset& calib, double alpha,
                                const MethodConfig& config, RngStream rng) {
  require_rows(train, "cp-studentized", "training");
  require_rows(calib, "cp-studentized", "calibration");
  auto mean = fit_regressor(config.base, train, rng.derive("mean"));
  Dataset abs_res = train;
  abs_res.y = residual_scores(*mean, train);
  abs_res.oracle.reset();
  auto scale = fit_regressor(config.dispersion, abs_res, rng.derive("scale"));
  std::vector<double> scores(calib.size());
  bool clamped = false;
  for (std::size_t i = 0; i < calib.size(); ++i) {
    const double s = scale->predict(calib.X.row(i));
    clamped = clamped || s < 0;
    scores[i] = std::abs(calib.y[i] - mean->predict(calib.X.row(i))) / (std::max(0.0, s) + config.epsilon);
  }
  const double q = conformal_quantile(scores, alpha);
  MethodConfig c = config;
  c.kind = MethodKind::CpStudentized;
  auto p = std::make_shared<SplitPredictor>(c, alpha, mean, scale, q, std::move(scores));
  if (clamped) p->add_flag("negative dispersion clamped at 0");
  return p;
}

// ---------------------------------------------------------------- CQR

CqrPredictor::CqrPredictor(MethodConfig config, double alpha, ModelPtr lo, ModelPtr hi, double threshold,
                           std::vector<double> scores)
    : IntervalPredictor(std::move(config), alpha),
      lo_(std::move(lo)),
      hi_(std::move(hi)),
      q_(threshold),
      scores_(std::move(scores)) {}

Interval CqrPredictor::predict(std::span<const double> x) const {
  if (std::isinf(q_) && q_ > 0) return {-kInf, kInf};
  Interval r{lo_->predict(x) - q_, hi_->predict(x) + q_};
  if (r.lower > r.upper) {
    std::swap(r.lower, r.upper);
    r.flagged = true;
  }
  return r;
}

void CqrPredictor::write(nlohmann::json& j) const {
  j["lower_model"] = lo_->to_json();
  j["upper_model"] = hi_->to_json();
  j["threshold"] = json_number(q_);
  j["scores"] = scores_;
}

PredictorPtr fit_cqr(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                     RngStream rng) {
  require_rows(train, "cqr", "training");
  require_rows(calib, "cqr", "calibration");
  auto fit_quantile = [&](double tau, const char* label) {
    LearnerConfig qc = config.quantile;
    if (qc.family == LearnerFamily::Auto) {
      const auto grid = default_quantile_grid(tau);
      qc = select_learner(train.X, train.y, grid, 5, rng.derive(label).derive("select"), Task::Quantile, tau).config;
    } else if (qc.family == LearnerFamily::Gbt) {
      qc.loss = GbtLoss::Pinball;
    } else if (qc.family != LearnerFamily::LinearQuantile) {
      throw ConfigError("cqr: quantile learner must be auto, gbt or qlinear");
    }
    qc.tau = tau;
    return fit_model(qc, train.X, train.y, {}, rng.derive(label));
  };
  auto lo = fit_quantile(alpha / 2, "lower");
  auto hi = fit_quantile(1 - alpha / 2, "upper");
  std::vector<double> scores(calib.size());
  for (std::size_t i = 0; i < calib.size(); ++i) {
    const auto x = calib.X.row(i);
    scores[i] = std::max(lo->predict(x) - calib.y[i], calib.y[i] - hi->predict(x));
  }
  const double q = conformal_quantile(scores, alpha);
  MethodConfig c = config;
  c.kind = MethodKind::Cqr;
  return std::make_shared<CqrPredictor>(c, alpha, lo, hi, q, std::move(scores));
}

// ---------------------------------------------------------------- CV+

CvPlusPredictor::CvPlusPredictor(MethodConfig config, double alpha, std::vector<ModelPtr> fold_models,
                                 std::vector<int> fold_of, std::vector<double> residuals)
    : IntervalPredictor(std::move(config), alpha),
      models_(std::move(fold_models)),
      fold_of_(std::move(fold_of)),
      residuals_(std::move(residuals)) {}

Interval CvPlusPredictor::predict(std::span<const double> x) const {
  const std::size_t n = residuals_.size();
  std::vector<double> mu(models_.size());
  for (std::size_t k = 0; k < models_.size(); ++k) mu[k] = models_[k]->predict(x);
  std::vector<double> minus(n), plus(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = mu[static_cast<std::size_t>(fold_of_[i])];
    minus[i] = m - residuals_[i];
    plus[i] = m + residuals_[i];
  }
  Interval r;
  const std::size_t klo = lower_rank(n, alpha_);
  if (klo == 0) {
    r.lower = -kInf;
  } else {
    const auto it = minus.begin() + static_cast<std::ptrdiff_t>(std::min(klo, n) - 1);
    std::nth_element(minus.begin(), it, minus.end());
    r.lower = *it;
  }
  const std::size_t khi = conformal_rank(n, alpha_);
  if (khi > n) {
    r.upper = kInf;
  } else {
    const auto it = plus.begin() + static_cast<std::ptrdiff_t>(khi - 1);
    std::nth_element(plus.begin(), it, plus.end());
    r.upper = *it;
  }
  if (r.lower > r.upper) {
    std::swap(r.lower, r.upper);
    r.flagged = true;
  }
  return r;
}

void CvPlusPredictor::write(nlohmann::json& j) const {
  auto arr = nlohmann::json::array();
  for (const auto& m : models_) arr.push_back(m->to_json());
  j["fold_models"] = std::move(arr);
  j["fold_of"] = fold_of_;
  j["residuals"] = residuals_;
}

PredictorPtr fit_cv_plus(const Dataset& train, double alpha, const MethodConfig& config, RngStream rng) {
  require_rows(train, "cv-plus", "training");
  const std::size_t n = train.size();
  const LearnerConfig base = resolve(config.base, train, rng.derive("select"));
  const auto folds = kfold(n, config.folds, rng.derive("folds"));
  std::vector<ModelPtr> models;
  std::vector<int> fold_of(n);
  std::vector<double> resid(n);
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const auto rest = complement(n, folds[k]);
    const Dataset part = train.subset(rest);
    auto m = fit_model(base, part.X, part.y, {}, rng.derive("fold", k));
    for (auto i : folds[k]) {
      fold_of[i] = static_cast<int>(k);
      resid[i] = std::abs(train.y[i] - m->predict(train.X.row(i)));
    }
    models.push_back(std::move(m));
  }
  MethodConfig c = config;
  c.kind = MethodKind::CvPlus;
  c.base = base;
  return std::make_shared<CvPlusPredictor>(c, alpha, std::move(models), std::move(fold_of), std::move(resid));
}

// ---------------------------------------------------------------- LCP / RLCP

LocalPredictor::LocalPredictor(MethodConfig config, double alpha, ModelPtr mean, Matrix calib_X,
                               std::vector<double> scores, double bandwidth, RngStream rng)
    : IntervalPredictor(std::move(config), alpha), mean_(std::move(mean)), h_(bandwidth), rng_(rng) {
  if (!(h_ > 0) || !std::isfinite(h_)) throw ConfigError("local conformal: bandwidth must be positive and finite");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  X_ = calib_X.select_rows(order);
  scores_.resize(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) scores_[i] = scores[order[i]];
}

double LocalPredictor::kernel_threshold(std::span<const double> center, double denom) const {
  const std::size_t n = scores_.size();
  std::vector<double> d2(n), w(n);
  double dmin = kInf;
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = squared_distance(center, X_.row(i));
    dmin = std::min(dmin, d2[i]);
  }
  // Shifting by the smallest distance rescales all weights by one constant,
  // which leaves the normalized weights unchanged and avoids underflow.
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(-(d2[i] - dmin) / denom);
  return weighted_quantile_sorted(scores_, w, 1.0 - alpha_);
}

double LocalPredictor::threshold(std::span<const double> x) const {
  if (!randomized()) return kernel_threshold(x, h_);
  const double denom = 2.0 * h_ * h_;
  if (config_.suppress_noise) return kernel_threshold(x, denom);
  RngStream r = rng_.derive(hash_point(x));
  std::vector<double> center(x.size());
  double sum = 0;
  for (int m = 0; m < config_.draws; ++m) {
    for (std::size_t j = 0; j < x.size(); ++j) center[j] = x[j] + h_ * r.normal();
    sum += kernel_threshold(center, denom);
  }
  return sum / config_.draws;
}

Interval LocalPredictor::predict(std::span<const double> x) const {
  const double m = mean_->predict(x);
  const double t = threshold(x);
  return {m - t, m + t};
}

void LocalPredictor::write(nlohmann::json& j) const {
  j["mean"] = mean_->to_json();
  j["cols"] = X_.cols();
  j["calib_X"] = X_.data();
  j["scores"] = scores_;
  j["bandwidth"] = h_;
  j["rng"] = rng_json(rng_);
}

double rlcp_bandwidth(const Matrix& train_X, const Matrix& calib_X) {
  const std::size_t n = train_X.rows();
  if (n < 2) throw DataError("rlcp: bandwidth needs at least two training rows");
  if (calib_X.rows() == 0) throw DataError("rlcp: empty calibration set");
  const auto k = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  std::vector<double> kth(calib_X.rows()), d(n);
  for (std::size_t c = 0; c < calib_X.rows(); ++c) {
    for (std::size_t i = 0; i < n; ++i) d[i] = squared_distance(calib_X.row(c), train_X.row(i));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    kth[c] = std::sqrt(d[k - 1]);
  }
  const double h = empirical_quantile(kth, 0.5);
  if (!(h > 0)) throw NumericalError("rlcp: zero bandwidth (duplicated rows)");
  return h;
}

BandwidthSearch lcp_auto_bandwidth(const Matrix& calib_X, std::span<const double> scores, double alpha) {
  const std::size_t n = calib_X.rows();
  if (n < 2) throw DataError("lcp: bandwidth search needs at least two calibration rows");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = scores[order[i]];

  std::vector<double> D(n * n), pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double v = squared_distance(calib_X.row(order[a]), calib_X.row(order[b]));
      D[a * n + b] = D[b * n + a] = v;
      pairs.push_back(v);
    }
  double med = empirical_quantile(pairs, 0.5);
  if (!(med > 0)) med = 1.0;

  BandwidthSearch out;
  std::vector<double> w(n);
  double best = kInf;
  for (double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    const double h = med * f;
    std::size_t covered = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double dmin = kInf;
      for (std::size_t i = 0; i < n; ++i)
        if (i != j) dmin = std::min(dmin, D[j * n + i]);
      for (std::size_t i = 0; i < n; ++i) w[i] = i == j ? 0.0 : std::exp(-(D[j * n + i] - dmin) / h);
      if (sorted[j] <= weighted_quantile_sorted(sorted, w, 1.0 - alpha)) ++covered;
    }
    const double cov = static_cast<double>(covered) / static_cast<double>(n);
    out.grid.push_back(h);
    out.coverage.push_back(cov);
    const double gap = std::abs(cov - (1.0 - alpha));
    if (gap < best) {
      best = gap;
      out.chosen = h;
    }
  }
  return out;
}

PredictorPtr fit_lcp(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                     RngStream rng) {
  require_rows(train, "lcp", "training");
  require_rows(calib, "lcp", "calibration");
  auto mean = fit_regressor(config.base, train, rng.derive("mean"));
  auto scores = residual_scores(*mean, calib);
  double h = config.bandwidth;
  if (!(h > 0)) h = calib.size() >= 2 ? lcp_auto_bandwidth(calib.X, scores, alpha).chosen : 1.0;
  MethodConfig c = config;
  c.kind = MethodKind::Lcp;
  return std::make_shared<LocalPredictor>(c, alpha, mean, calib.X, std::move(scores), h, rng.derive("local"));
}

PredictorPtr fit_rlcp(const Dataset& train, const Dataset& calib, double alpha, const MethodConfig& config,
                      RngStream rng) {
  require_rows(train, "rlcp", "training");
  require_rows(calib, "rlcp", "calibration");
  if (config.draws < 1) throw ConfigError("rlcp: draws must be >= 1");
  double h = config.bandwidth;
  if (!(h > 0)) h = rlcp_bandwidth(train.X, calib.X);
  auto mean = fit_regressor(config.base, train, rng.derive("mean"));
  auto scores = residual_scores(*mean, calib);
  MethodConfig c = config;
  c.kind = MethodKind::Rlcp;
  return std::make_shared<LocalPredictor>(c, alpha, mean, calib.X, std::move(scores), h, rng.derive("local"));
}

// ---------------------------------------------------------------- bootstrap

BootstrapPredictor::BootstrapPredictor(MethodConfig config, double alpha, std::vector<ModelPtr> refits,
                                       std::vector<double> centered_residuals, RngStream rng)
    : IntervalPredictor(std::move(config), alpha),
      refits_(std::move(refits)),
      residuals_(std::move(centered_residuals)),
      rng_(rng) {}

Interval BootstrapPredictor::predict(std::span<const double> x) const {
  RngStream r = rng_.derive(hash_point(x));
  std::vector<double> draws(refits_.size());
  for (std::size_t b = 0; b < refits_.size(); ++b)
    draws[b] = refits_[b]->predict(x) + residuals_[r.uniform_index(residuals_.size())];
  return {empirical_quantile(draws, alpha_ / 2), empirical_quantile(draws, 1 - alpha_ / 2)};
}

void BootstrapPredictor::write(nlohmann::json& j) const {
  auto arr = nlohmann::json::array();
  for (const auto& m : refits_) arr.push_back(m->to_json());
  j["refits"] = std::move(arr);
  j["residuals"] = residuals_;
  j["rng"] = rng_json(rng_);
}

PredictorPtr fit_bootstrap(const Dataset& train, double alpha, const MethodConfig& config, RngStream rng) {
  require_rows(train, "bootstrap", "training");
  if (config.resamples < 50) throw ConfigError("bootstrap: resamples must be >= 50");
  const std::size_t n = train.size();
  const LearnerConfig base = resolve(config.base, train, rng.derive("select"));
  const auto folds = kfold(n, config.folds, rng.derive("folds"));
  std::vector<double> resid(n);
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const Dataset part = train.subset(complement(n, folds[k]));
    auto m = fit_model(base, part.X, part.y, {}, rng.derive("fold", k));
    for (auto i : folds[k]) resid[i] = train.y[i] - m->predict(train.X.row(i));
  }
  double mean = 0;
  for (double r : resid) mean += r;
  mean /= static_cast<double>(n);
  for (double& r : resid) r -= mean;
  std::vector<ModelPtr> refits;
  std::vector<std::size_t> idx(n);
  for (int b = 0; b < config.resamples; ++b) {
    RngStream rb = rng.derive("resample", static_cast<std::uint64_t>(b));
    for (auto& i : idx) i = static_cast<std::size_t>(rb.uniform_index(n));
    const Dataset boot = train.subset(idx);
    refits.push_back(fit_model(base, boot.X, boot.y, {}, rb.derive("fit")));
  }
  MethodConfig c = config;
  c.kind = MethodKind::Bootstrap;
  c.base = base;
  return std::make_shared<BootstrapPredictor>(c, alpha, std::move(refits), std::move(resid), rng.derive("draws"));
}

// ---------------------------------------------------------------- QRF

QrfPredictor::QrfPredictor(MethodConfig config, double alpha, std::shared_ptr<const Forest> forest)
    : IntervalPredictor(std::move(config), alpha), forest_(std::move(forest)) {}

Interval QrfPredictor::predict(std::span<const double> x) const {
  return {forest_quantile_predict(*forest_, x, alpha_ / 2), forest_quantile_predict(*forest_, x, 1 - alpha_ / 2)};
}

void QrfPredictor::write(nlohmann::json& j) const { j["forest"] = forest_->to_json(); }

PredictorPtr fit_qrf(const Dataset& train, double alpha, const MethodConfig& config, RngStream rng) {
  require_rows(train, "qrf", "training");
  const LearnerConfig& f = config.forest;
  if (f.family != LearnerFamily::Forest) throw ConfigError("qrf: forest option must name a forest learner");
  ForestParams fp{f.trees, f.max_depth, f.min_leaf, f.max_features, f.bootstrap, true};
  auto forest = std::make_shared<Forest>(fit_forest(train.X, train.y, {}, fp, rng.derive("forest")));
  MethodConfig c = config;
  c.kind = MethodKind::Qrf;
  return std::make_shared<QrfPredictor>(c, alpha, forest);
}

// ---------------------------------------------------------------- OLS t-interval

OlsIntervalPredictor::OlsIntervalPredictor(MethodConfig config, double alpha, std::shared_ptr<const OlsModel> model)
    : IntervalPredictor(std::move(config), alpha),
      model_(std::move(model)),
      t_(student_t_quantile(1 - alpha_ / 2, model_->df())) {
  if (model_->ridge_fallback()) flags_.push_back(model_->flag());
}

Interval OlsIntervalPredictor::predict(std::span<const double> x) const {
  const double m = model_->predict(x);
  const double s = model_->residual_se(), se = model_->mean_se(x);
  const double half = t_ * std::sqrt(s * s + se * se);
  return {m - half, m + half};
}

void OlsIntervalPredictor::write(nlohmann::json& j) const { j["model"] = model_->to_json(); }

PredictorPtr fit_ols_interval(const Dataset& train, double alpha, const MethodConfig& config) {
  require_rows(train, "ols", "training");
  auto m = std::make_shared<OlsModel>(fit_ols(train));
  MethodConfig c = config;
  c.kind = MethodKind::OlsT;
  return std::make_shared<OlsIntervalPredictor>(c, alpha, m);
}

// ---------------------------------------------------------------- fixtures

FixturePredictor::FixturePredictor(MethodConfig config, double alpha, ModelPtr point, OracleModel oracle)
    : IntervalPredictor(std::move(config), alpha), point_(std::move(point)), oracle_(std::move(oracle)) {}

Interval FixturePredictor::predict(std::span<const double> x) const {
  switch (config_.kind) {
    case MethodKind::CoverAll: return {-kInf, kInf};
    case MethodKind::ZeroWidth: {
      const double m = point_->predict(x);
      return {m, m};
    }
    case MethodKind::OracleStub: {
      const double z = noise_quantile(oracle_.noise, 1 - alpha_ / 2);
      const double m = oracle_.mu(x), s = oracle_.sigma(x);
      return {m - z * s, m + z * s};
    }
    default: break;
  }
  throw ConfigError("fixture predictor: unsupported kind");
}

void FixturePredictor::write(nlohmann::json& j) const {
  if (config_.kind == MethodKind::OracleStub) throw ConfigError("the oracle-width fixture cannot be serialized");
  if (point_) j["point"] = point_->to_json();
}

// ---------------------------------------------------------------- dispatch

PredictorPtr fit_method(const MethodConfig& config, const Dataset& data, double alpha, RngStream rng,
                        const OracleModel* oracle) {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0, 1)");
  require_rows(data, config.name().c_str(), "training");
  auto two_way = [&](auto fit) {
    const SplitPlan plan = split(data.size(), 1.0 - config.calib_fraction, rng.derive("pred-calib"));
    return fit(data.subset(plan.train), data.subset(plan.eval), alpha, config, rng.derive("fit"));
  };
  switch (config.kind) {
    case MethodKind::CpResidual: return two_way(fit_cp_residual);
    case MethodKind::CpStudentized: return two_way(fit_cp_studentized);
    case MethodKind::Cqr: return two_way(fit_cqr);
    case MethodKind::Lcp: return two_way(fit_lcp);
    case MethodKind::Rlcp: return two_way(fit_rlcp);
    case MethodKind::CvPlus: return fit_cv_plus(data, alpha, config, rng.derive("fit"));
    case MethodKind::Bootstrap: return fit_bootstrap(data, alpha, config, rng.derive("fit"));
    case MethodKind::Qrf: return fit_qrf(data, alpha, config, rng.derive("fit"));
    case MethodKind::OlsT: return fit_ols_interval(data, alpha, config);
    case MethodKind::CoverAll: return std::make_shared<FixturePredictor>(config, alpha, nullptr, OracleModel{});
    case MethodKind::ZeroWidth:
      return std::make_shared<FixturePredictor>(config, alpha, fit_regressor(config.base, data, rng.derive("fit")),
                                                OracleModel{});
    case MethodKind::OracleStub:
      if (!oracle) throw ConfigError("oracle-stub needs a data-generating process with known mu and sigma");
      return std::make_shared<FixturePredictor>(config, alpha, nullptr, *oracle);
  }
  throw ConfigError("fit_method: unknown method");
}

PredictorPtr predictor_from_json(const nlohmann::json& j) {
  const MethodConfig c = MethodConfig::from_json(j.at("method"));
  const double alpha = j.at("alpha").get<double>();
  std::shared_ptr<IntervalPredictor> p;
  switch (c.kind) {
    case MethodKind::CpResidual:
    case MethodKind::CpStudentized:
      p = std::make_shared<SplitPredictor>(c, alpha, model_from_json(j.at("mean")),
                                           j.contains("scale") ? model_from_json(j["scale"]) : nullptr,
                                           number_from_json(j.at("threshold")),
                                           j.at("scores").get<std::vector<double>>());
      break;
    case MethodKind::Cqr:
      p = std::make_shared<CqrPredictor>(c, alpha, model_from_json(j.at("lower_model")),
                                         model_from_json(j.at("upper_model")), number_from_json(j.at("threshold")),
                                         j.at("scores").get<std::vector<double>>());
      break;
    case MethodKind::CvPlus: {
      std::vector<ModelPtr> ms;
      for (const auto& m : j.at("fold_models")) ms.push_back(model_from_json(m));
      p = std::make_shared<CvPlusPredictor>(c, alpha, std::move(ms), j.at("fold_of").get<std::vector<int>>(),
                                            j.at("residuals").get<std::vector<double>>());
      break;
    }
    case MethodKind::Lcp:
    case MethodKind::Rlcp: {
      auto scores = j.at("scores").get<std::vector<double>>();
      Matrix X(scores.size(), j.at("cols").get<std::size_t>(), j.at("calib_X").get<std::vector<double>>());
      p = std::make_shared<LocalPredictor>(c, alpha, model_from_json(j.at("mean")), std::move(X), std::move(scores),
                                           j.at("bandwidth").get<double>(), rng_from(j.at("rng")));
      break;
    }
    case MethodKind::Bootstrap: {
      std::vector<ModelPtr> ms;
      for (const auto& m : j.at("refits")) ms.push_back(model_from_json(m));
      p = std::make_shared<BootstrapPredictor>(c, alpha, std::move(ms), j.at("residuals").get<std::vector<double>>(),
                                               rng_from(j.at("rng")));
      break;
    }
    case MethodKind::Qrf: p = std::make_shared<QrfPredictor>(c, alpha, Forest::from_json(j.at("forest"))); break;
    case MethodKind::OlsT: p = std::make_shared<OlsIntervalPredictor>(c, alpha, OlsModel::from_json(j.at("model"))); break;
    case MethodKind::CoverAll:
    case MethodKind::ZeroWidth:
      p = std::make_shared<FixturePredictor>(c, alpha, j.contains("point") ? model_from_json(j["point"]) : nullptr,
                                             OracleModel{});
      break;
    case MethodKind::OracleStub: throw ConfigError("the oracle-width fixture cannot be deserialized");
  }
  if (!p->flags().empty()) return p;
  for (const auto& f : j.value("flags", std::vector<std::string>{})) p->add_flag(f);
  return p;
}

}  // namespace cpa
