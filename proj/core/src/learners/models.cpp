#include "cpa/learners/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Dense>

#include "cpa/error.hpp"
#include "cpa/quantile.hpp"

namespace cpa {

namespace {

const char* family_name(LearnerFamily f) {
  switch (f) {
    case LearnerFamily::Auto: return "auto";
    case LearnerFamily::Ols: return "ols";
    case LearnerFamily::Knn: return "knn";
    case LearnerFamily::Forest: return "forest";
    case LearnerFamily::Gbt: return "gbt";
    case LearnerFamily::Logistic: return "logistic";
    case LearnerFamily::Constant: return "constant";
    case LearnerFamily::LinearQuantile: return "qlinear";
  }
  return "?";
}

LearnerFamily family_from(const std::string& s) {
  static const std::map<std::string, LearnerFamily> m = {
      {"auto", LearnerFamily::Auto},       {"ols", LearnerFamily::Ols},
      {"knn", LearnerFamily::Knn},         {"forest", LearnerFamily::Forest},
      {"gbt", LearnerFamily::Gbt},         {"logistic", LearnerFamily::Logistic},
      {"constant", LearnerFamily::Constant}, {"qlinear", LearnerFamily::LinearQuantile}};
  auto it = m.find(s);
  if (it == m.end()) throw ConfigError("unknown learner family '" + s + "'");
  return it->second;
}

const char* loss_name(GbtLoss l) {
  switch (l) {
    case GbtLoss::Squared: return "squared";
    case GbtLoss::Pinball: return "pinball";
    case GbtLoss::Logistic: return "logistic";
  }
  return "?";
}

GbtLoss loss_from(const std::string& s) {
  if (s == "squared") return GbtLoss::Squared;
  if (s == "pinball") return GbtLoss::Pinball;
  if (s == "logistic") return GbtLoss::Logistic;
  throw ConfigError("unknown gbt loss '" + s + "'");
}

double parse_number(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("learner option " + key + ": expected a number, got '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_number(key, v);
  if (d != std::floor(d)) throw ConfigError("learner option " + key + ": expected an integer, got '" + v + "'");
  return static_cast<int>(d);
}

void check_xy(const Matrix& X, std::span<const double> y, std::span<const double> w, const char* who) {
  if (X.rows() == 0) throw DataError(std::string(who) + ": empty training set");
  if (y.size() != X.rows()) throw ConfigError(std::string(who) + ": target length does not match rows");
  if (!w.empty() && w.size() != X.rows()) throw ConfigError(std::string(who) + ": weight length does not match rows");
}

std::string number(double v) { return format_double(v); }

bool single_class(std::span<const double> y) {
  return std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
}

}  // namespace

// ---------------------------------------------------------------- config

LearnerConfig LearnerConfig::knn(int k) {
  LearnerConfig c;
  c.family = LearnerFamily::Knn;
  c.k = k;
  return c;
}

LearnerConfig LearnerConfig::forest(int trees, int max_depth, int min_leaf) {
  LearnerConfig c;
  c.family = LearnerFamily::Forest;
  c.trees = trees;
  c.max_depth = max_depth;
  c.min_leaf = min_leaf;
  return c;
}

LearnerConfig LearnerConfig::gbt(GbtLoss loss, int trees, double lr, int max_depth, double tau) {
  LearnerConfig c;
  c.family = LearnerFamily::Gbt;
  c.loss = loss;
  c.trees = trees;
  c.lr = lr;
  c.max_depth = max_depth;
  c.tau = tau;
  return c;
}

LearnerConfig LearnerConfig::linear_quantile(double tau) {
  LearnerConfig c;
  c.family = LearnerFamily::LinearQuantile;
  c.tau = tau;
  return c;
}

LearnerConfig LearnerConfig::logistic(double l2) {
  LearnerConfig c;
  c.family = LearnerFamily::Logistic;
  c.l2 = l2;
  return c;
}

LearnerConfig LearnerConfig::automatic() {
  LearnerConfig c;
  c.family = LearnerFamily::Auto;
  return c;
}

std::string LearnerConfig::to_string() const {
  std::string s = family_name(family);
  auto depth = [&] { return max_depth < 0 ? std::string("none") : std::to_string(max_depth); };
  switch (family) {
    case LearnerFamily::Auto:
    case LearnerFamily::Ols: break;
    case LearnerFamily::Knn: s += ":k=" + std::to_string(k); break;
    case LearnerFamily::Forest:
      s += ":trees=" + std::to_string(trees) + ",depth=" + depth() + ",min_leaf=" + std::to_string(min_leaf) +
           ",max_features=" + std::to_string(max_features) + ",bootstrap=" + (bootstrap ? "1" : "0");
      break;
    case LearnerFamily::Gbt:
      s += std::string(":loss=") + loss_name(loss);
      if (loss == GbtLoss::Pinball) s += ",tau=" + number(tau);
      s += ",trees=" + std::to_string(trees) + ",lr=" + number(lr) + ",depth=" + depth() +
           ",min_leaf=" + std::to_string(min_leaf);
      break;
    case LearnerFamily::Logistic: s += ":l2=" + number(l2); break;
    case LearnerFamily::Constant: s += ":value=" + number(constant); break;
    case LearnerFamily::LinearQuantile: s += ":tau=" + number(tau); break;
  }
  return s;
}

LearnerConfig LearnerConfig::parse(const std::string& text) {
  LearnerConfig c;
  const auto colon = text.find(':');
  c.family = family_from(text.substr(0, colon));
  if (c.family == LearnerFamily::Forest) c.trees = 100;
  if (c.family == LearnerFamily::Gbt) c.max_depth = 3;
  if (colon == std::string::npos) return c;
  std::string rest = text.substr(colon + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? rest.size() + 1 : comma + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("learner option '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), v = item.substr(eq + 1);
    if (key == "trees")
      c.trees = parse_int(key, v);
    else if (key == "depth")
      c.max_depth = (v == "none" || v == "None") ? -1 : parse_int(key, v);
    else if (key == "min_leaf")
      c.min_leaf = parse_int(key, v);
    else if (key == "max_features")
      c.max_features = parse_int(key, v);
    else if (key == "lr")
      c.lr = parse_number(key, v);
    else if (key == "loss")
      c.loss = loss_from(v);
    else if (key == "tau")
      c.tau = parse_number(key, v);
    else if (key == "k")
      c.k = parse_int(key, v);
    else if (key == "l2")
      c.l2 = parse_number(key, v);
    else if (key == "bootstrap")
      c.bootstrap = parse_int(key, v) != 0;
    else if (key == "value")
      c.constant = parse_number(key, v);
    else
      throw ConfigError("unknown learner option '" + key + "'");
  }
  return c;
}

nlohmann::json LearnerConfig::to_json() const {
  return {{"family", family_name(family)},
          {"trees", trees},
          {"max_depth", max_depth},
          {"min_leaf", min_leaf},
          {"max_features", max_features},
          {"lr", lr},
          {"loss", loss_name(loss)},
          {"tau", tau},
          {"k", k},
          {"l2", l2},
          {"bootstrap", bootstrap},
          {"constant", constant}};
}

LearnerConfig LearnerConfig::from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse(j.get<std::string>());
  LearnerConfig c;
  c.family = family_from(j.at("family").get<std::string>());
  c.trees = j.value("trees", c.trees);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.min_leaf = j.value("min_leaf", c.min_leaf);
  c.max_features = j.value("max_features", c.max_features);
  c.lr = j.value("lr", c.lr);
  c.loss = loss_from(j.value("loss", std::string("squared")));
  c.tau = j.value("tau", c.tau);
  c.k = j.value("k", c.k);
  c.l2 = j.value("l2", c.l2);
  c.bootstrap = j.value("bootstrap", c.bootstrap);
  c.constant = j.value("constant", c.constant);
  return c;
}

// ---------------------------------------------------------------- base

std::vector<double> Model::predict(const Matrix& X) const {
  std::vector<double> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i));
  return out;
}

nlohmann::json Model::meta_json() const {
  return {{"family", family_name(config_.family)},
          {"config", config_.to_json()},
          {"train_rows", train_rows_},
          {"flag", flag_}};
}

void Model::read_meta(const nlohmann::json& j) {
  config_ = LearnerConfig::from_json(j.at("config"));
  train_rows_ = j.at("train_rows").get<std::size_t>();
  flag_ = j.value("flag", std::string());
}

double clamp_probability(double p) { return std::clamp(p, 1e-6, 1.0 - 1e-6); }

std::vector<double> inverse_frequency_weights(std::span<const double> labels) {
  std::size_t ones = 0;
  for (double v : labels) ones += v > 0.5 ? 1 : 0;
  const std::size_t n = labels.size(), zeros = n - ones;
  std::vector<double> w(n, 1.0);
  if (ones == 0 || zeros == 0) return w;
  const double w1 = static_cast<double>(n) / (2.0 * static_cast<double>(ones));
  const double w0 = static_cast<double>(n) / (2.0 * static_cast<double>(zeros));
  for (std::size_t i = 0; i < n; ++i) w[i] = labels[i] > 0.5 ? w1 : w0;
  return w;
}

// ---------------------------------------------------------------- constant

ConstantModel::ConstantModel(double value, std::size_t rows, std::string flag) : value_(value) {
  config_.family = LearnerFamily::Constant;
  config_.constant = value;
  train_rows_ = rows;
  flag_ = std::move(flag);
}

nlohmann::json ConstantModel::to_json() const {
  auto j = meta_json();
  j["value"] = value_;
  return j;
}

std::shared_ptr<ConstantModel> ConstantModel::from_json(const nlohmann::json& j) {
  auto m = std::make_shared<ConstantModel>(j.at("value").get<double>(), 0);
  m->read_meta(j);
  return m;
}

// ---------------------------------------------------------------- OLS

OlsModel fit_ols(const Matrix& X, std::span<const double> y, bool ridge_fallback) {
  check_xy(X, y, {}, "fit_ols");
  const std::size_t n = X.rows(), p = X.cols(), q = p + 1;
  if (n <= q) throw DataError("fit_ols: need more rows than coefficients (n=" + std::to_string(n) +
                              ", p=" + std::to_string(p) + ")");
  Eigen::MatrixXd A(n, q);
  Eigen::VectorXd b(n);
  for (std::size_t i = 0; i < n; ++i) {
    A(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) A(i, j + 1) = X(i, j);
    b(i) = y[i];
  }
  OlsModel m;
  m.config_.family = LearnerFamily::Ols;
  m.train_rows_ = n;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  Eigen::MatrixXd xtx = A.transpose() * A;
  Eigen::VectorXd beta;
  if (static_cast<std::size_t>(qr.rank()) < q) {
    if (!ridge_fallback) throw NumericalError("fit_ols: design matrix is rank deficient");
    for (std::size_t j = 1; j < q; ++j) xtx(j, j) += 1e-8;
    m.flag_ = "rank-deficient design; ridge 1e-8 fallback";
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
    beta = ldlt.solve(A.transpose() * b);
  } else {
    beta = qr.solve(b);
  }
  if (!beta.allFinite()) throw NumericalError("fit_ols: coefficients are not finite");
  Eigen::MatrixXd inv = xtx.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
  const Eigen::VectorXd resid = b - A * beta;
  m.df_ = static_cast<double>(n - q);
  m.sigma_ = std::sqrt(resid.squaredNorm() / m.df_);
  m.beta_.assign(beta.data(), beta.data() + q);
  m.xtx_inv_.resize(q * q);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) m.xtx_inv_[i * q + j] = inv(i, j);
  return m;
}

double OlsModel::predict(std::span<const double> x) const {
  double s = beta_[0];
  for (std::size_t j = 0; j + 1 < beta_.size(); ++j) s += beta_[j + 1] * x[j];
  return s;
}

double OlsModel::mean_se(std::span<const double> x) const {
  const std::size_t q = beta_.size();
  auto xt = [&](std::size_t i) { return i == 0 ? 1.0 : x[i - 1]; };
  double quad = 0;
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) quad += xt(i) * xtx_inv_[i * q + j] * xt(j);
  return sigma_ * std::sqrt(std::max(0.0, quad));
}

nlohmann::json OlsModel::to_json() const {
  auto j = meta_json();
  j["beta"] = beta_;
  j["xtx_inv"] = xtx_inv_;
  j["sigma"] = sigma_;
  j["df"] = df_;
  return j;
}

std::shared_ptr<OlsModel> OlsModel::from_json(const nlohmann::json& j) {
  auto m = std::make_shared<OlsModel>();
  m->read_meta(j);
  m->beta_ = j.at("beta").get<std::vector<double>>();
  m->xtx_inv_ = j.at("xtx_inv").get<std::vector<double>>();
  m->sigma_ = j.at("sigma").get<double>();
  m->df_ = j.at("df").get<double>();
  return m;
}

// ---------------------------------------------------------------- kNN

KnnModel fit_knn(const Matrix& X, std::span<const double> y, int k) {
  check_xy(X, y, {}, "fit_knn");
  if (k < 1 || static_cast<std::size_t>(k) > X.rows())
    throw ConfigError("fit_knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(X.rows()) + "]");
  KnnModel m;
  m.config_ = LearnerConfig::knn(k);
  m.train_rows_ = X.rows();
  m.X_ = X;
  m.y_.assign(y.begin(), y.end());
  m.k_ = k;
  return m;
}

double KnnModel::predict(std::span<const double> x) const {
  const std::size_t n = X_.rows(), p = X_.cols();
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = X_.row(i);
    double s = 0;
    for (std::size_t j = 0; j < p; ++j) {
      const double t = r[j] - x[j];
      s += t * t;
    }
    d[i] = {s, i};
  }
  const auto kk = static_cast<std::size_t>(k_);
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk - 1), d.end());
  double s = 0;
  for (std::size_t i = 0; i < kk; ++i) s += y_[d[i].second];
  return s / static_cast<double>(kk);
}

nlohmann::json KnnModel::to_json() const {
  auto j = meta_json();
  j["k"] = k_;
  j["cols"] = X_.cols();
  j["X"] = X_.data();
  j["y"] = y_;
  return j;
}

std::shared_ptr<KnnModel> KnnModel::from_json(const nlohmann::json& j) {
  auto m = std::make_shared<KnnModel>();
  m->read_meta(j);
  m->k_ = j.at("k").get<int>();
  m->y_ = j.at("y").get<std::vector<double>>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto flat = j.at("X").get<std::vector<double>>();
  m->X_ = Matrix(m->y_.size(), cols, flat);
  return m;
}

// ---------------------------------------------------------------- forest

namespace {
std::size_t resolve_max_features(int requested, std::size_t p) {
  if (requested < 0) return p;
  if (requested > 0) return std::min<std::size_t>(static_cast<std::size_t>(requested), p);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(p)))));
}
}  // namespace

Forest::Forest(std::vector<RegressionTree> trees) : trees_(std::move(trees)) {
  config_.family = LearnerFamily::Forest;
  config_.trees = static_cast<int>(trees_.size());
  tree_seeds_.assign(trees_.size(), 0);
}

Forest fit_forest(const Matrix& X, std::span<const double> y, std::span<const double> weights,
                  const ForestParams& params, RngStream rng) {
  check_xy(X, y, weights, "fit_forest");
  if (params.trees < 1) throw ConfigError("fit_forest: trees must be >= 1");
  if (params.min_leaf < 1) throw ConfigError("fit_forest: min_leaf must be >= 1");
  const std::size_t n = X.rows();
  Forest f;
  f.config_ = LearnerConfig::forest(params.trees, params.max_depth, params.min_leaf);
  f.config_.max_features = params.max_features;
  f.config_.bootstrap = params.bootstrap;
  f.train_rows_ = n;
  SortedColumns sorted(X);
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_leaf = static_cast<std::size_t>(params.min_leaf);
  tp.max_features = resolve_max_features(params.max_features, X.cols());
  tp.retain_samples = params.retain_samples;
  std::vector<std::uint32_t> counts(n);
  f.trees_.reserve(static_cast<std::size_t>(params.trees));
  for (int b = 0; b < params.trees; ++b) {
    RngStream tr = rng.derive("tree", static_cast<std::uint64_t>(b));
    f.tree_seeds_.push_back(tr.stream_id());
    if (params.bootstrap) {
      std::fill(counts.begin(), counts.end(), 0u);
      for (std::size_t i = 0; i < n; ++i) ++counts[tr.uniform_index(n)];
    } else {
      std::fill(counts.begin(), counts.end(), 1u);
    }
    TreeFitInput in{X, sorted, y, weights, counts};
    f.trees_.push_back(fit_tree(in, tp, tr));
  }
  return f;
}

double Forest::predict(std::span<const double> x) const {
  double s = 0;
  for (const auto& t : trees_) s += t.predict(x);
  return s / static_cast<double>(trees_.size());
}

double forest_quantile_predict(const Forest& f, std::span<const double> x, double tau) {
  if (f.trees().empty()) throw ConfigError("forest_quantile_predict: forest is not fitted");
  if (!(tau > 0 && tau < 1)) throw ConfigError("forest_quantile_predict: tau must lie in (0, 1)");
  std::vector<double> values, weights;
  const double B = static_cast<double>(f.trees().size());
  for (const auto& t : f.trees()) {
    const auto leaf = t.leaf_samples(t.leaf_index(x));
    if (leaf.empty()) throw ConfigError("forest_quantile_predict: leaf samples were not retained");
    const double w = 1.0 / (B * static_cast<double>(leaf.size()));
    for (double v : leaf) {
      values.push_back(v);
      weights.push_back(w);
    }
  }
  return weighted_quantile(values, weights, tau);
}

nlohmann::json Forest::to_json() const {
  auto j = meta_json();
  j["tree_seeds"] = tree_seeds_;
  auto arr = nlohmann::json::array();
  for (const auto& t : trees_) arr.push_back(t.to_json());
  j["trees"] = std::move(arr);
  return j;
}

std::shared_ptr<Forest> Forest::from_json(const nlohmann::json& j) {
  auto f = std::make_shared<Forest>();
  f->read_meta(j);
  f->tree_seeds_ = j.at("tree_seeds").get<std::vector<std::uint64_t>>();
  for (const auto& t : j.at("trees")) f->trees_.push_back(RegressionTree::from_json(t));
  return f;
}

// ---------------------------------------------------------------- GBT

ModelPtr fit_gbt(const Matrix& X, std::span<const double> y, std::span<const double> weights,
                 const GbtParams& params, RngStream rng) {
  check_xy(X, y, weights, "fit_gbt");
  if (params.trees < 0) throw ConfigError("fit_gbt: trees must be >= 0");
  if (!(params.lr > 0 && params.lr <= 1)) throw ConfigError("fit_gbt: lr must lie in (0, 1]");
  if (params.loss == GbtLoss::Pinball && !(params.tau > 0 && params.tau < 1))
    throw ConfigError("fit_gbt: tau must lie in (0, 1)");
  const std::size_t n = X.rows();
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);

  auto m = std::make_shared<GbtModel>();
  LearnerConfig cfg = LearnerConfig::gbt(params.loss, params.trees, params.lr, params.max_depth, params.tau);
  cfg.min_leaf = params.min_leaf;
  m->loss_ = params.loss;
  m->tau_ = params.tau;

  switch (params.loss) {
    case GbtLoss::Squared: {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += w[i] * y[i];
      m->init_ = s / wsum;
      break;
    }
    case GbtLoss::Pinball: m->init_ = weighted_quantile(y, w, params.tau); break;
    case GbtLoss::Logistic: {
      if (single_class(y)) {
        auto c = std::make_shared<ConstantModel>(clamp_probability(y[0]), n, "single-class target");
        return c;
      }
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += w[i] * y[i];
      const double pbar = s / wsum;
      m->init_ = std::log(pbar / (1 - pbar));
      break;
    }
  }

  std::vector<double> F(n, m->init_), g(n);
  SortedColumns sorted(X);
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_leaf = static_cast<std::size_t>(std::max(1, params.min_leaf));
  std::vector<int> leaf_of(n);
  std::vector<double> vals, wts;
  for (int t = 0; t < params.trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      switch (params.loss) {
        case GbtLoss::Squared: g[i] = y[i] - F[i]; break;
        case GbtLoss::Pinball: g[i] = y[i] < F[i] ? params.tau - 1.0 : params.tau; break;
        case GbtLoss::Logistic: g[i] = y[i] - sigmoid(F[i]); break;
      }
    }
    RngStream tr = rng.derive("stage", static_cast<std::uint64_t>(t));
    RegressionTree tree = fit_tree({X, sorted, g, w, {}}, tp, tr);
    if (params.loss != GbtLoss::Squared) {
      std::map<int, std::vector<std::size_t>> members;
      for (std::size_t i = 0; i < n; ++i) members[tree.leaf_index(X.row(i))].push_back(i);
      for (const auto& [leaf, rows] : members) {
        double v = 0;
        if (params.loss == GbtLoss::Pinball) {
          vals.clear();
          wts.clear();
          for (auto i : rows) {
            vals.push_back(y[i] - F[i]);
            wts.push_back(w[i]);
          }
          v = weighted_quantile(vals, wts, params.tau);
        } else {
          double num = 0, den = 0;
          for (auto i : rows) {
            const double p = sigmoid(F[i]);
            num += w[i] * (y[i] - p);
            den += w[i] * p * (1 - p);
          }
          v = den > 1e-12 ? num / den : 0.0;
        }
        tree.set_leaf_value(leaf, v);
      }
    }
    tree.scale_leaves(params.lr);
    for (std::size_t i = 0; i < n; ++i) F[i] += tree.predict(X.row(i));
    m->trees_.push_back(std::move(tree));
  }
  m->config_ = cfg;
  m->train_rows_ = n;
  return m;
}

double GbtModel::raw(std::span<const double> x) const {
  double s = init_;
  for (const auto& t : trees_) s += t.predict(x);
  return s;
}

double GbtModel::predict(std::span<const double> x) const {
  const double r = raw(x);
  return loss_ == GbtLoss::Logistic ? clamp_probability(sigmoid(r)) : r;
}

nlohmann::json GbtModel::to_json() const {
  auto j = meta_json();
  j["loss"] = loss_name(loss_);
  j["tau"] = tau_;
  j["init"] = init_;
  auto arr = nlohmann::json::array();
  for (const auto& t : trees_) arr.push_back(t.to_json());
  j["trees"] = std::move(arr);
  return j;
}

std::shared_ptr<GbtModel> GbtModel::from_json(const nlohmann::json& j) {
  auto m = std::make_shared<GbtModel>();
  m->read_meta(j);
  m->loss_ = loss_from(j.at("loss").get<std::string>());
  m->tau_ = j.at("tau").get<double>();
  m->init_ = j.at("init").get<double>();
  for (const auto& t : j.at("trees")) m->trees_.push_back(RegressionTree::from_json(t));
  return m;
}

// ---------------------------------------------------------------- logistic

namespace {
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
}  // namespace

double logistic_objective(const Matrix& X, std::span<const double> y, std::span<const double> weights, double l2,
                          std::span<const double> beta, std::vector<double>* gradient) {
  const std::size_t n = X.rows(), p = X.cols();
  double obj = 0;
  if (gradient) gradient->assign(p + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = X.row(i);
    double z = beta[0];
    for (std::size_t j = 0; j < p; ++j) z += beta[j + 1] * r[j];
    const double w = weights.empty() ? 1.0 : weights[i];
    obj += w * (y[i] * z - softplus(z));
    if (gradient) {
      const double e = w * (y[i] - sigmoid(z));
      (*gradient)[0] += e;
      for (std::size_t j = 0; j < p; ++j) (*gradient)[j + 1] += e * r[j];
    }
  }
  for (std::size_t j = 1; j <= p; ++j) {
    obj -= 0.5 * l2 * beta[j] * beta[j];
    if (gradient) (*gradient)[j] -= l2 * beta[j];
  }
  return obj;
}

ModelPtr fit_logistic(const Matrix& X, std::span<const double> y, std::span<const double> weights, double l2) {
  check_xy(X, y, weights, "fit_logistic");
  if (l2 < 0) throw ConfigError("fit_logistic: l2 must be >= 0");
  const std::size_t n = X.rows(), p = X.cols(), q = p + 1;
  if (single_class(y)) return std::make_shared<ConstantModel>(clamp_probability(y[0]), n, "single-class target");

  std::vector<double> beta(q, 0.0), grad, trial(q);
  double obj = logistic_objective(X, y, weights, l2, beta, &grad);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += weights.empty() ? 1.0 : weights[i];
  const double tol = 1e-8 * std::max(1.0, total);
  auto m = std::make_shared<LogisticModel>();
  int it = 0;
  for (; it < 500; ++it) {
    double gmax = 0;
    for (double v : grad) gmax = std::max(gmax, std::abs(v));
    if (gmax <= tol) break;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = X.row(i);
      double z = beta[0];
      for (std::size_t j = 0; j < p; ++j) z += beta[j + 1] * r[j];
      const double s = sigmoid(z);
      const double c = (weights.empty() ? 1.0 : weights[i]) * s * (1 - s);
      for (std::size_t a = 0; a < q; ++a) {
        const double xa = a == 0 ? 1.0 : r[a - 1];
        for (std::size_t b = 0; b <= a; ++b) {
          const double xb = b == 0 ? 1.0 : r[b - 1];
          H(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += c * xa * xb;
        }
      }
    }
    for (std::size_t j = 1; j < q; ++j) H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += l2;
    H = H.selfadjointView<Eigen::Lower>();
    Eigen::VectorXd gv = Eigen::Map<Eigen::VectorXd>(grad.data(), static_cast<Eigen::Index>(q));
    const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H + 1e-12 * scale * Eigen::MatrixXd::Identity(H.rows(), H.cols()));
    Eigen::VectorXd step = ldlt.solve(gv);
    if (!step.allFinite()) step = gv / scale;
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      for (std::size_t j = 0; j < q; ++j) trial[j] = beta[j] + t * step(static_cast<Eigen::Index>(j));
      const double o = logistic_objective(X, y, weights, l2, trial, nullptr);
      if (o > obj) {
        beta = trial;
        obj = logistic_objective(X, y, weights, l2, beta, &grad);
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  m->beta_ = beta;
  m->iterations_ = it;
  m->config_ = LearnerConfig::logistic(l2);
  m->train_rows_ = n;
  return m;
}

double LogisticModel::linear(std::span<const double> x) const {
  double z = beta_[0];
  for (std::size_t j = 0; j + 1 < beta_.size(); ++j) z += beta_[j + 1] * x[j];
  return z;
}

double LogisticModel::predict(std::span<const double> x) const { return clamp_probability(sigmoid(linear(x))); }

nlohmann::json LogisticModel::to_json() const {
  auto j = meta_json();
  j["beta"] = beta_;
  j["iterations"] = iterations_;
  return j;
}

std::shared_ptr<LogisticModel> LogisticModel::from_json(const nlohmann::json& j) {
  auto m = std::make_shared<LogisticModel>();
  m->read_meta(j);
  m->beta_ = j.at("beta").get<std::vector<double>>();
  m->iterations_ = j.value("iterations", 0);
  return m;
}

// ---------------------------------------------------------------- linear quantile

double pinball_loss(std::span<const double> y, std::span<const double> f, double tau,
                    std::span<const double> weights) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - f[i];
    s += (weights.empty() ? 1.0 : weights[i]) * (r >= 0 ? tau * r : (tau - 1) * r);
  }
  return s;
}

ModelPtr fit_linear_quantile(const Matrix& X, std::span<const double> y, std::span<const double> weights,
                             double tau) {
  check_xy(X, y, weights, "fit_linear_quantile");
  if (!(tau > 0 && tau < 1)) throw ConfigError("fit_linear_quantile: tau must lie in (0, 1)");
  const std::size_t n = X.rows(), p = X.cols(), q = p + 1;
  if (n <= q) throw DataError("fit_linear_quantile: need more rows than coefficients");
  const auto Q = static_cast<Eigen::Index>(q);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(n), Q);
  Eigen::VectorXd b(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    A(ii, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) A(ii, static_cast<Eigen::Index>(j + 1)) = X(i, j);
    b(ii) = y[i];
  }
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd r = b - A * beta;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = r(static_cast<Eigen::Index>(i));
      s += w(i) * (v >= 0 ? tau * v : (tau - 1) * v);
    }
    return s;
  };
  // pinball(r) = (|r| + (2 tau - 1) r) / 2; |r| is majorized by
  // r^2 / (2 |r_old|) + |r_old| / 2, so every step lowers the objective.
  Eigen::VectorXd lin = Eigen::VectorXd::Zero(Q);
  for (std::size_t i = 0; i < n; ++i) lin += (2 * tau - 1) * w(i) * A.row(static_cast<Eigen::Index>(i)).transpose();
  auto solve = [&](const Eigen::VectorXd& c, bool with_linear) {
    Eigen::MatrixXd H = A.transpose() * c.asDiagonal() * A;
    const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    for (Eigen::Index j = 1; j < Q; ++j) H(j, j) += 1e-10 * scale;
    Eigen::VectorXd rhs = A.transpose() * (c.asDiagonal() * b);
    if (with_linear) rhs += lin;
    return Eigen::VectorXd(H.ldlt().solve(rhs));
  };

  Eigen::VectorXd c(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) c(static_cast<Eigen::Index>(i)) = w(i);
  Eigen::VectorXd beta = solve(c, false);
  double obj = objective(beta);
  Eigen::VectorXd best = beta;
  double best_obj = obj;
  const double eps = 1e-9 * std::max(1.0, (b.array() - b.mean()).abs().mean());
  int it = 0, stale = 0;
  for (; it < 500 && stale < 5; ++it) {
    const Eigen::VectorXd r = b - A * beta;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      c(ii) = w(i) / std::max(std::abs(r(ii)), eps);
    }
    beta = solve(c, true);
    if (!beta.allFinite()) break;
    obj = objective(beta);
    stale = obj < best_obj * (1 - 1e-12) ? 0 : stale + 1;
    if (obj < best_obj) {
      best_obj = obj;
      best = beta;
    }
  }
  auto m = std::make_shared<LinearQuantileModel>();
  m->beta_.assign(best.data(), best.data() + q);
  m->iterations_ = it;
  m->config_ = LearnerConfig::linear_quantile(tau);
  m->train_rows_ = n;
  return m;
}

double LinearQuantileModel::predict(std::span<const double> x) const {
  double s = beta_[0];
  for (std::size_t j = 0; j + 1 < beta_.size(); ++j) s += beta_[j + 1] * x[j];
  return s;
}

nlohmann::json LinearQuantileModel::to_json() const {
  auto j = meta_json();
  j["beta"] = beta_;
  j["iterations"] = iterations_;
  return j;
}

std::shared_ptr<LinearQuantileModel> LinearQuantileModel::from_json(const nlohmann::json& j) {
  auto m = std::make_shared<LinearQuantileModel>();
  m->read_meta(j);
  m->beta_ = j.at("beta").get<std::vector<double>>();
  m->iterations_ = j.value("iterations", 0);
  return m;
}

// ---------------------------------------------------------------- dispatch

ModelPtr fit_model(const LearnerConfig& c, const Matrix& X, std::span<const double> y,
                   std::span<const double> weights, RngStream rng) {
  switch (c.family) {
    case LearnerFamily::Auto: throw ConfigError("fit_model: 'auto' must be resolved by select_learner first");
    case LearnerFamily::Ols: return std::make_shared<OlsModel>(fit_ols(X, y));
    case LearnerFamily::Knn: return std::make_shared<KnnModel>(fit_knn(X, y, c.k));
    case LearnerFamily::Forest: {
      ForestParams fp{c.trees, c.max_depth, c.min_leaf, c.max_features, c.bootstrap, true};
      return std::make_shared<Forest>(fit_forest(X, y, weights, fp, rng));
    }
    case LearnerFamily::Gbt:
      return fit_gbt(X, y, weights, {c.loss, c.tau, c.trees, c.lr, c.max_depth, c.min_leaf}, rng);
    case LearnerFamily::Logistic: return fit_logistic(X, y, weights, c.l2);
    case LearnerFamily::Constant: return std::make_shared<ConstantModel>(c.constant, X.rows());
    case LearnerFamily::LinearQuantile: return fit_linear_quantile(X, y, weights, c.tau);
  }
  throw ConfigError("fit_model: unknown family");
}

ModelPtr model_from_json(const nlohmann::json& j) {
  switch (family_from(j.at("family").get<std::string>())) {
    case LearnerFamily::Ols: return OlsModel::from_json(j);
    case LearnerFamily::Knn: return KnnModel::from_json(j);
    case LearnerFamily::Forest: return Forest::from_json(j);
    case LearnerFamily::Gbt: return GbtModel::from_json(j);
    case LearnerFamily::Logistic: return LogisticModel::from_json(j);
    case LearnerFamily::Constant: return ConstantModel::from_json(j);
    case LearnerFamily::LinearQuantile: return LinearQuantileModel::from_json(j);
    case LearnerFamily::Auto: break;
  }
  throw ConfigError("model_from_json: unsupported family");
}

}  // namespace cpa
