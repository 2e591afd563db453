#include "cpa/reliability.hpp"

#include <algorithm>
#include <fstream>

#include "cpa/error.hpp"
#include "cpa/learners/selection.hpp"
#include "cpa/parallel.hpp"

namespace cpa {

// ---------------------------------------------------------------- labels

double CoverageLabels::mean() const {
  if (labels.empty()) return 0.0;
  double s = 0;
  for (double v : labels) s += v;
  return s / static_cast<double>(labels.size());
}

void CoverageLabels::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,I\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << ids[i] << ',' << (labels[i] > 0.5 ? 1 : 0) << '\n';
}

CoverageLabels generate_labels(const IntervalPredictor& pred, const Dataset& eval_set, std::uint64_t split_id) {
  CoverageLabels out;
  out.X = eval_set.X;
  out.ids = eval_set.ids;
  out.split_id = split_id;
  out.labels.resize(eval_set.size());
  for (std::size_t i = 0; i < eval_set.size(); ++i)
    out.labels[i] = pred.predict(eval_set.X.row(i)).contains(eval_set.y[i]) ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------- config

std::vector<LearnerConfig> desk_classifier_grid() {
  return {LearnerConfig::logistic(1.0), LearnerConfig::forest(100, 6),
          LearnerConfig::gbt(GbtLoss::Logistic, 100, 0.1, 3)};
}

std::vector<std::string> EstimatorConfig::preset_names() {
  return {"baseline", "desk", "pert_1", "pert_2", "pert_3", "pert_4", "pert_5", "pert_6", "pert_7"};
}

EstimatorConfig EstimatorConfig::from_preset(const std::string& name) {
  EstimatorConfig c;
  c.preset = name;
  if (name == "baseline") return c;
  if (name == "desk") {
    c.learners = desk_classifier_grid();
  } else if (name == "pert_1") {
    c.calibration.method = CalibrationMethod::None;
  } else if (name == "pert_2") {
    c.calibration.method = CalibrationMethod::Platt;
  } else if (name == "pert_3") {
    c.calibration = {CalibrationMethod::Binning, 10};
  } else if (name == "pert_4") {
    c.learners = {LearnerConfig::logistic(1.0)};
  } else if (name == "pert_5") {
    c.learners = {LearnerConfig::forest(50, 3)};
  } else if (name == "pert_6") {
    c.learners = {LearnerConfig::forest(100, 6)};
  } else if (name == "pert_7") {
    c.learners.clear();
    for (const auto& l : default_classifier_grid())
      if (l.family == LearnerFamily::Gbt) c.learners.push_back(l);
  } else {
    throw ConfigError("unknown estimator preset '" + name + "'");
  }
  return c;
}

void EstimatorConfig::validate() const {
  if (learners.empty()) throw ConfigError("estimator: no candidate classifiers");
  for (const auto& l : learners)
    if (l.family == LearnerFamily::Auto) throw ConfigError("estimator: 'auto' is not a classifier");
  if (K < 1) throw ConfigError("estimator: K must be >= 1");
  if (!(rho > 0 && rho < 1)) throw ConfigError("estimator: rho must lie in (0, 1)");
  if (folds < 2) throw ConfigError("estimator: folds must be >= 2");
  if (calibration.method == CalibrationMethod::Binning && calibration.bins < 1)
    throw ConfigError("estimator: binning needs at least one bin");
}

nlohmann::json EstimatorConfig::to_json() const {
  nlohmann::json ls = nlohmann::json::array();
  for (const auto& l : learners) ls.push_back(l.to_string());
  return {{"preset", preset}, {"learners", ls},     {"calibration", calibration.to_string()},
          {"K", K},           {"rho", rho},         {"folds", folds}};
}

EstimatorConfig EstimatorConfig::from_json(const nlohmann::json& j) {
  EstimatorConfig c = from_preset(j.value("preset", std::string("baseline")));
  if (j.contains("learners")) {
    c.learners.clear();
    for (const auto& l : j.at("learners")) c.learners.push_back(LearnerConfig::parse(l.get<std::string>()));
  }
  if (j.contains("calibration")) c.calibration = CalibrationSpec::parse(j.at("calibration").get<std::string>());
  c.K = j.value("K", c.K);
  c.rho = j.value("rho", c.rho);
  c.folds = j.value("folds", c.folds);
  return c;
}

// ---------------------------------------------------------------- member

ReliabilityMember::ReliabilityMember(std::vector<Pair> pairs, LearnerConfig learner)
    : pairs_(std::move(pairs)), learner_(std::move(learner)) {}

ReliabilityMember ReliabilityMember::constant(double value, std::string flag) {
  ReliabilityMember m;
  m.value_ = value;
  m.flag_ = std::move(flag);
  return m;
}

double ReliabilityMember::predict(std::span<const double> x) const {
  if (pairs_.empty()) return value_;
  double s = 0;
  for (const auto& p : pairs_) s += p.calibrator.apply(p.model->predict(x));
  return std::clamp(s / static_cast<double>(pairs_.size()), 0.0, 1.0);
}

nlohmann::json ReliabilityMember::to_json() const {
  nlohmann::json j{{"learner", learner_.to_string()}, {"flag", flag_}, {"constant", is_constant()}, {"value", value_}};
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : pairs_) ps.push_back({{"model", p.model->to_json()}, {"calibrator", p.calibrator.to_json()}});
  j["pairs"] = ps;
  return j;
}

ReliabilityMember ReliabilityMember::from_json(const nlohmann::json& j) {
  if (j.at("constant").get<bool>()) return constant(j.at("value").get<double>(), j.value("flag", std::string()));
  std::vector<Pair> pairs;
  for (const auto& p : j.at("pairs")) pairs.push_back({model_from_json(p.at("model")), Calibrator::from_json(p.at("calibrator"))});
  ReliabilityMember m(std::move(pairs), LearnerConfig::parse(j.at("learner").get<std::string>()));
  m.flag_ = j.value("flag", std::string());
  return m;
}

namespace {

std::size_t count_ones(std::span<const double> y) {
  std::size_t ones = 0;
  for (double v : y) ones += v > 0.5 ? 1 : 0;
  return ones;
}

ModelPtr fit_classifier(const LearnerConfig& cfg, const Matrix& X, std::span<const double> y, RngStream rng) {
  const std::size_t ones = count_ones(y);
  if (ones == 0 || ones == y.size())
    return std::make_shared<ConstantModel>(ones ? 1.0 : 0.0, y.size(), "single-class training labels");
  const auto w = inverse_frequency_weights(y);
  return fit_model(cfg, X, y, w, rng);
}

}  // namespace

MemberFit fit_member(CoverageLabels labels, const EstimatorConfig& est, RngStream rng) {
  const std::size_t n = labels.labels.size();
  if (n < 2) throw DataError("reliability member: need at least two labelled rows");
  MemberFit fit;
  const std::size_t ones = count_ones(labels.labels);
  if (ones == 0 || ones == n) {
    const double v = ones ? 1.0 : 0.0;
    fit.member = ReliabilityMember::constant(v, "single-class coverage labels");
    fit.oof.assign(n, v);
    fit.labels = std::move(labels);
    return fit;
  }

  const auto sel = select_learner(labels.X, labels.labels, est.learners, est.folds, rng.derive("select"),
                                  Task::Classification);
  fit.cv_loss = sel.cv_loss;
  fit.selection_folds = sel.folds;

  const auto halves = stratified_kfold(labels.labels, 2, rng.derive("crossfit"));
  if (halves[0].empty() || halves[1].empty()) throw DataError("reliability member: too few rows to cross-fit");
  fit.oof.resize(n);
  std::vector<ReliabilityMember::Pair> pairs;
  for (std::size_t h = 0; h < 2; ++h) {
    const auto train = complement(n, halves[h]);
    std::vector<double> yt(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) yt[i] = labels.labels[train[i]];
    auto model = fit_classifier(sel.config, labels.X.select_rows(train), yt, rng.derive("pair", h));

    std::vector<double> scores(halves[h].size()), yc(halves[h].size());
    for (std::size_t i = 0; i < halves[h].size(); ++i) {
      scores[i] = model->predict(labels.X.row(halves[h][i]));
      yc[i] = labels.labels[halves[h][i]];
    }
    auto cal = fit_calibrator(est.calibration, scores, yc);
    for (std::size_t i = 0; i < halves[h].size(); ++i) fit.oof[halves[h][i]] = std::clamp(cal.apply(scores[i]), 0.0, 1.0);
    pairs.push_back({std::move(model), std::move(cal)});
  }
  fit.member = ReliabilityMember(std::move(pairs), sel.config);
  fit.labels = std::move(labels);
  return fit;
}

// ---------------------------------------------------------------- ensemble

ReliabilityEstimator::ReliabilityEstimator(std::vector<ReliabilityMember> members, EstimatorConfig config,
                                           MethodConfig cp, double alpha)
    : members_(std::move(members)), config_(std::move(config)), cp_(std::move(cp)), alpha_(alpha) {
  if (members_.empty()) throw ConfigError("reliability estimator needs at least one member");
}

double ReliabilityEstimator::predict(std::span<const double> x) const {
  double s = 0;
  for (const auto& m : members_) s += m.predict(x);
  return std::clamp(s / static_cast<double>(members_.size()), 0.0, 1.0);
}

std::vector<double> ReliabilityEstimator::predict(const Matrix& X) const {
  std::vector<double> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i));
  return out;
}

nlohmann::json ReliabilityEstimator::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : members_) ms.push_back(m.to_json());
  return {{"alpha", alpha_},   {"method", cp_.to_json()}, {"estimator", config_.to_json()},
          {"seed", seed},      {"stream_id", stream_id},  {"flags", flags_},
          {"members", ms}};
}

ReliabilityEstimator ReliabilityEstimator::from_json(const nlohmann::json& j) {
  std::vector<ReliabilityMember> ms;
  for (const auto& m : j.at("members")) ms.push_back(ReliabilityMember::from_json(m));
  ReliabilityEstimator e(std::move(ms), EstimatorConfig::from_json(j.at("estimator")),
                         MethodConfig::from_json(j.at("method")), j.at("alpha").get<double>());
  e.seed = j.value("seed", std::uint64_t{0});
  e.stream_id = j.value("stream_id", std::uint64_t{0});
  for (const auto& f : j.value("flags", nlohmann::json::array())) e.flags_.push_back(f.get<std::string>());
  return e;
}

TrainResult cpa_train_detailed(const Dataset& d, double alpha, const MethodConfig& cp, const EstimatorConfig& est,
                               RngStream rng, const OracleModel* oracle) {
  est.validate();
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0, 1)");
  const std::size_t n = d.size();
  const auto K = static_cast<std::size_t>(est.K);

  TrainResult res;
  for (std::size_t k = 0; k < K; ++k) {
    res.splits.push_back(split(n, est.rho, rng.derive("split", k)));
    if (res.splits.back().train.empty() || res.splits.back().eval.empty())
      throw DataError("cpa_train: a split side is empty; more rows are needed");
  }
  res.fits.resize(K);
  parallel_for(K, [&](std::size_t k) {
    const auto& plan = res.splits[k];
    const auto pred = fit_method(cp, d.subset(plan.train), alpha, rng.derive("cp", k), oracle);
    auto labels = generate_labels(*pred, d.subset(plan.eval), k);
    res.fits[k] = fit_member(std::move(labels), est, rng.derive("member", k));
  });

  std::vector<ReliabilityMember> members;
  std::size_t degenerate = 0;
  for (const auto& f : res.fits) {
    members.push_back(f.member);
    degenerate += f.member.is_constant() ? 1 : 0;
  }
  res.estimator = ReliabilityEstimator(std::move(members), est, cp, alpha);
  res.estimator.seed = rng.seed();
  res.estimator.stream_id = rng.stream_id();
  for (std::size_t k = 0; k < K; ++k)
    if (res.fits[k].member.is_constant()) res.estimator.add_flag("member " + std::to_string(k) + ": single-class labels");
  if (degenerate == K) res.estimator.add_flag("all members degenerate");
  return res;
}

ReliabilityEstimator cpa_train(const Dataset& d, double alpha, const MethodConfig& cp, const EstimatorConfig& est,
                               RngStream rng, const OracleModel* oracle) {
  return cpa_train_detailed(d, alpha, cp, est, rng, oracle).estimator;
}

std::vector<double> cross_fitted_reliability(const TrainResult& result, const Matrix& X) {
  const auto& members = result.estimator.members();
  const std::size_t n = X.rows();
  std::vector<double> out(n, 0.0);
  std::vector<double> held(n);
  std::vector<char> seen(n);
  for (std::size_t k = 0; k < members.size(); ++k) {
    std::fill(seen.begin(), seen.end(), 0);
    const auto& plan = result.splits[k];
    for (std::size_t i = 0; i < plan.eval.size(); ++i) {
      held[plan.eval[i]] = result.fits[k].oof[i];
      seen[plan.eval[i]] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) out[i] += seen[i] ? held[i] : members[k].predict(X.row(i));
  }
  for (auto& v : out) v /= static_cast<double>(members.size());
  return out;
}

}  // namespace cpa
