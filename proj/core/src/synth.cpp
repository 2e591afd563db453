#include "cpa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "cpa/distributions.hpp"
#include "cpa/error.hpp"
#include "cpa/json_number.hpp"
#include "cpa/metrics.hpp"
#include "cpa/parallel.hpp"

namespace cpa {

std::string to_string(Setting s) {
  switch (s) {
    case Setting::A: return "A";
    case Setting::B: return "B";
    case Setting::C: return "C";
    case Setting::D: return "D";
    case Setting::Feasibility: return "feasibility";
  }
  return "?";
}

Setting setting_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Setting::A;
  if (s == "B" || s == "b") return Setting::B;
  if (s == "C" || s == "c") return Setting::C;
  if (s == "D" || s == "d") return Setting::D;
  if (s == "feasibility") return Setting::Feasibility;
  throw ConfigError("unknown setting '" + s + "' (expected A, B, C, D or feasibility)");
}

nlohmann::json DgpSpec::to_json() const {
  return {{"setting", to_string(setting)}, {"n", n}, {"p", p}, {"seed", seed}, {"replicates", replicates}};
}

DgpSpec DgpSpec::from_json(const nlohmann::json& j) {
  DgpSpec s;
  s.setting = setting_from_string(j.value("setting", std::string("A")));
  s.n = j.value("n", s.n);
  s.p = j.value("p", s.p);
  s.seed = j.value("seed", s.seed);
  s.replicates = j.value("replicates", s.replicates);
  return s;
}

// ---------------------------------------------------------------- generators

namespace {

double dot(std::span<const double> x, std::span<const double> b) {
  double s = 0;
  for (std::size_t j = 0; j < b.size(); ++j) s += x[j] * b[j];
  return s;
}

std::vector<double> sparse_beta(std::size_t p) {
  std::vector<double> b(p, 0.0);
  for (std::size_t j = 0; j < std::min<std::size_t>(5, p); ++j) b[j] = 1.0;
  return b;
}

Matrix normal_matrix(std::size_t n, std::size_t p, RngStream rng) {
  Matrix X(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

// Fills y and the oracle columns from mu/sigma applied to every row.
SynthData finish(Matrix X, OracleModel oracle, std::vector<double> beta, RngStream noise_rng) {
  const std::size_t n = X.rows();
  OracleColumns cols;
  cols.noise = oracle.noise;
  cols.mu.resize(n);
  cols.sigma.resize(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    cols.mu[i] = oracle.mu(X.row(i));
    cols.sigma[i] = oracle.sigma(X.row(i));
    const double eps = oracle.noise == NoiseFamily::StandardNormal ? noise_rng.normal() : noise_rng.student_t2();
    y[i] = cols.mu[i] + cols.sigma[i] * eps;
  }
  SynthData out{Dataset(std::move(X), std::move(y)), std::move(oracle), std::move(beta), {}};
  out.data.oracle = std::move(cols);
  return out;
}

}  // namespace

double skew_normal(double shape, RngStream& rng) {
  const double delta = shape / std::sqrt(1.0 + shape * shape);
  const double z0 = rng.normal(), z1 = rng.normal();
  return delta * std::abs(z0) + std::sqrt(1.0 - delta * delta) * z1;
}

SynthData gen_setting_a(std::size_t n, RngStream rng) {
  auto beta = sparse_beta(10);
  OracleModel o{[beta](std::span<const double> x) { return dot(x, beta); },
                [](std::span<const double>) { return 1.0; }, NoiseFamily::StandardNormal};
  return finish(normal_matrix(n, 10, rng.derive("X")), std::move(o), beta, rng.derive("noise"));
}

SynthData gen_setting_b(std::size_t n, RngStream rng) {
  OracleModel o{[](std::span<const double> x) {
                  return std::sin(2 * std::numbers::pi * x[0]) + 2 * std::cos(std::numbers::pi * x[1]) +
                         3 * x[2] * x[3] + x[4];
                },
                [](std::span<const double>) { return 1.0; }, NoiseFamily::StudentT2};
  return finish(normal_matrix(n, 10, rng.derive("X")), std::move(o), {}, rng.derive("noise"));
}

SynthData gen_setting_c(std::size_t n, RngStream rng) {
  auto beta = sparse_beta(10);
  OracleModel o{[beta](std::span<const double> x) { return dot(x, beta); },
                [](std::span<const double> x) { return std::exp(0.5 * x[0]); }, NoiseFamily::StandardNormal};
  return finish(normal_matrix(n, 10, rng.derive("X")), std::move(o), beta, rng.derive("noise"));
}

namespace {

void mixture_row(std::span<double> row, RngStream& rng) {
  const std::size_t p = row.size();
  std::vector<double> raw(p);
  for (auto& v : raw) {
    switch (rng.uniform_index(3)) {
      case 0: v = rng.normal(); break;
      case 1: v = skew_normal(5.0, rng); break;
      default: v = rng.bernoulli(0.5) ? 1.0 : 0.0; break;
    }
  }
  std::copy(raw.begin(), raw.end(), row.begin());
  for (std::size_t j = 0; j < p; ++j) row[j] = 0.7 * raw[j] + 0.3 * row[j >= 3 ? j - 3 : 0];
}

}  // namespace

SynthData gen_setting_d(std::size_t n, std::size_t p, RngStream rng, int replicates, const RngStream* design) {
  if (p < 5) throw ConfigError("setting D needs p >= 5 for its 5-sparse coefficients");
  RngStream drng = design ? *design : rng.derive("design");

  std::vector<std::size_t> idx(p);
  for (std::size_t j = 0; j < p; ++j) idx[j] = j;
  RngStream srng = drng.derive("support");
  srng.shuffle(idx);
  std::vector<double> beta(p, 0.0);
  for (std::size_t j = 0; j < 5; ++j) beta[idx[j]] = 1.0;

  RngStream mrng = drng.derive("moment");
  std::vector<double> row(p);
  double m3 = 0;
  for (int t = 0; t < 10000; ++t) {
    mixture_row(row, mrng);
    m3 += std::pow(std::abs(dot(row, beta)), 3);
  }
  const double denom = m3 / 10000.0 + 1e-9;

  Matrix X(n, p);
  RngStream xrng = rng.derive("X");
  for (std::size_t i = 0; i < n; ++i) mixture_row(X.row(i), xrng);

  OracleModel o{[beta](std::span<const double> x) { return dot(x, beta); },
                [beta, denom](std::span<const double> x) {
                  return 1.0 + 2.0 * std::pow(std::abs(dot(x, beta)), 3) / denom;
                },
                NoiseFamily::StudentT2};
  SynthData out = finish(std::move(X), std::move(o), beta, rng.derive("noise"));
  if (replicates > 0) {
    RngStream rr = rng.derive("replicates");
    out.replicates.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.replicates[i].resize(static_cast<std::size_t>(replicates));
      for (auto& v : out.replicates[i]) v = out.data.oracle->mu[i] + out.data.oracle->sigma[i] * rr.student_t2();
    }
  }
  return out;
}

SynthData gen_feasibility(std::size_t d, std::size_t n, RngStream rng) {
  if (d < 1) throw ConfigError("feasibility design needs d >= 1");
  Matrix X(n, d);
  RngStream xrng = rng.derive("X");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) X(i, j) = 2.0 * xrng.uniform() - 1.0;
  OracleModel o{[](std::span<const double> x) {
                  double s = 0;
                  for (double v : x) s += v * v;
                  return std::pow(s, 0.25);
                },
                [](std::span<const double> x) { return 0.5 + std::abs(x[0]); }, NoiseFamily::StandardNormal};
  return finish(std::move(X), std::move(o), {}, rng.derive("noise"));
}

SynthData generate(Setting s, std::size_t n, std::size_t p, RngStream rng, int replicates, const RngStream* design) {
  switch (s) {
    case Setting::A: return gen_setting_a(n, rng);
    case Setting::B: return gen_setting_b(n, rng);
    case Setting::C: return gen_setting_c(n, rng);
    case Setting::D: return gen_setting_d(n, p, rng, replicates, design);
    case Setting::Feasibility: return gen_feasibility(p, n, rng);
  }
  throw ConfigError("unknown setting");
}

SynthData generate(const DgpSpec& spec) {
  return generate(spec.setting, spec.n, spec.p, RngStream(spec.seed), spec.replicates);
}

// ---------------------------------------------------------------- oracle

double oracle_coverage(double l, double u, double mu, double sigma, NoiseFamily noise) {
  if (!(sigma > 0)) throw ConfigError("oracle_coverage: sigma must be positive");
  if (!(l <= u)) throw ConfigError("oracle_coverage: lower end exceeds upper end");
  const double hi = std::isinf(u) ? (u > 0 ? 1.0 : 0.0) : noise_cdf(noise, (u - mu) / sigma);
  const double lo = std::isinf(l) ? (l > 0 ? 1.0 : 0.0) : noise_cdf(noise, (l - mu) / sigma);
  return std::clamp(hi - lo, 0.0, 1.0);
}

std::vector<double> oracle_etas(const IntervalPredictor& pred, const Dataset& test) {
  if (!test.oracle) throw DataError("oracle coverage needs a dataset with oracle columns");
  const auto& o = *test.oracle;
  std::vector<double> out(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Interval iv = pred.predict(test.X.row(i));
    out[i] = oracle_coverage(iv.lower, iv.upper, o.mu[i], o.sigma[i], o.noise);
  }
  return out;
}

double oracle_cvi(const IntervalPredictor& pred, const Dataset& test, double alpha) {
  const auto etas = oracle_etas(pred, test);
  double s = 0;
  for (double e : etas) s += std::abs(e - (1.0 - alpha));
  return s / static_cast<double>(etas.size());
}

// ---------------------------------------------------------------- feasibility

namespace {

Matrix columns(const Matrix& X, const std::vector<std::size_t>& keep) {
  if (keep.empty()) return X;
  Matrix out(X.rows(), keep.size());
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < keep.size(); ++j) out(i, j) = X(i, keep[j]);
  return out;
}

}  // namespace

FeasibilityResult feasibility_rep(std::size_t d, std::size_t n_train, std::size_t n_eval, std::size_t n_test,
                                  const MethodConfig& cp, const EstimatorConfig& est, double alpha, RngStream rng,
                                  const std::vector<std::size_t>& features) {
  for (auto j : features)
    if (j >= d) throw ConfigError("feasibility: feature index " + std::to_string(j) + " out of range");
  const auto train = gen_feasibility(d, n_train, rng.derive("train"));
  const auto eval = gen_feasibility(d, n_eval, rng.derive("eval"));
  const auto test = gen_feasibility(d, n_test, rng.derive("test"));
  const auto pred = fit_method(cp, train.data, alpha, rng.derive("cp"));
  auto labels = generate_labels(*pred, eval.data);
  labels.X = columns(labels.X, features);
  const auto fit = fit_member(std::move(labels), est, rng.derive("member"));
  const Matrix test_X = columns(test.data.X, features);

  FeasibilityResult r;
  r.eta_true = oracle_etas(*pred, test.data);
  r.eta_hat.resize(n_test);
  for (std::size_t i = 0; i < n_test; ++i) {
    r.eta_hat[i] = fit.member.predict(test_X.row(i));
    const double e = r.eta_hat[i] - r.eta_true[i];
    r.mae += std::abs(e);
    r.rmse += e * e;
  }
  r.mae /= static_cast<double>(n_test);
  r.rmse = std::sqrt(r.rmse / static_cast<double>(n_test));
  return r;
}

// ---------------------------------------------------------------- protocol

nlohmann::json ProtocolConfig::to_json() const {
  nlohmann::json s = nlohmann::json::array(), m = nlohmann::json::array();
  for (auto v : settings) s.push_back(to_string(v));
  for (const auto& v : methods) m.push_back(v.to_string());
  return {{"settings", s},           {"methods", m},
          {"n_select", n_select},    {"n_test", n_test},
          {"p", p},                  {"reps", reps},
          {"estimator", est.to_json()}, {"alpha", alpha},
          {"rho_values", rho_values}, {"n_values", n_values},
          {"wsc_delta", wsc_delta},  {"wsc_directions", wsc_directions}};
}

ProtocolConfig ProtocolConfig::from_json(const nlohmann::json& j) {
  ProtocolConfig c;
  if (j.contains("settings")) {
    c.settings.clear();
    for (const auto& s : j.at("settings")) c.settings.push_back(setting_from_string(s.get<std::string>()));
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(MethodConfig::parse(m.get<std::string>()));
  }
  c.n_select = j.value("n_select", c.n_select);
  c.n_test = j.value("n_test", c.n_test);
  c.p = j.value("p", c.p);
  c.reps = j.value("reps", c.reps);
  if (j.contains("estimator")) c.est = EstimatorConfig::from_json(j.at("estimator"));
  c.alpha = j.value("alpha", c.alpha);
  c.rho_values = j.value("rho_values", c.rho_values);
  c.n_values = j.value("n_values", c.n_values);
  c.wsc_delta = j.value("wsc_delta", c.wsc_delta);
  c.wsc_directions = j.value("wsc_directions", c.wsc_directions);
  return c;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MethodRep run_method(const MethodConfig& m, const SynthData& sel, const SynthData& test, const ProtocolConfig& cfg,
                     const EstimatorConfig& est, RngStream base, std::vector<double>* w1) {
  MethodRep r;
  const std::uint64_t key = hash_label(m.to_string());
  try {
    const auto tr = cpa_train_detailed(sel.data, cfg.alpha, m, est, base.derive("cpa", key), &sel.oracle);
    r.est_cvi = cvi_report(cross_fitted_reliability(tr, sel.data.X), cfg.alpha).cvi;

    const auto pred = fit_method(m, sel.data, cfg.alpha, base.derive("refit", key), &sel.oracle);
    const auto eta = oracle_etas(*pred, test.data);
    r.oracle_cvi = 0;
    for (double e : eta) r.oracle_cvi += std::abs(e - (1.0 - cfg.alpha));
    r.oracle_cvi /= static_cast<double>(eta.size());

    const auto iv = pred->predict(test.data.X);
    const auto ms = marginal_stats(iv, test.data.y);
    r.coverage = ms.coverage;
    r.avg_length = ms.avg_length;
    if (cfg.wsc_directions > 0) {
      const auto cov = coverage_labels(iv, test.data.y);
      r.wsc = wsc(test.data.X, cov, cfg.wsc_delta, cfg.wsc_directions, base.derive("wsc", key)).value;
    }
    w1->push_back(cvp_w1(tr.estimator.predict(test.data.X), eta));
  } catch (const Error& e) {
    r = MethodRep{};
    r.failed = true;
    r.error = e.what();
    r.est_cvi = r.oracle_cvi = kInf;
    r.coverage = r.avg_length = r.wsc = std::numeric_limits<double>::quiet_NaN();
    w1->push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

SliceSummary summarize(const std::vector<const ProtocolRep*>& reps, std::size_t methods) {
  SliceSummary s;
  if (reps.empty()) return s;
  s.setting = reps[0]->setting;
  s.rho = reps[0]->rho;
  s.n = reps[0]->n;
  std::vector<double> tau, n1, n3, h1, h3;
  for (const auto* r : reps) {
    tau.push_back(r->tau_w);
    n1.push_back(r->ndcg1);
    n3.push_back(r->ndcg3);
    h1.push_back(r->hit1);
    h3.push_back(r->hit3);
  }
  s.tau_w_mean = mean_of(tau);
  s.tau_w_sd = sd_of(tau);
  s.ndcg1_mean = mean_of(n1);
  s.ndcg1_sd = sd_of(n1);
  s.ndcg3_mean = mean_of(n3);
  s.ndcg3_sd = sd_of(n3);
  s.hit1_mean = mean_of(h1);
  s.hit3_mean = mean_of(h3);
  s.hit3_sd = sd_of(h3);
  // Per-method means skip failed reps.
  auto per_method = [&](auto get) {
    std::vector<double> out(methods);
    for (std::size_t m = 0; m < methods; ++m) {
      std::vector<double> v;
      for (const auto* r : reps)
        if (!r->methods[m].failed) v.push_back(get(*r, m));
      out[m] = v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(v);
    }
    return out;
  };
  s.est_cvi_mean = per_method([](const ProtocolRep& r, std::size_t m) { return r.methods[m].est_cvi; });
  s.oracle_cvi_mean = per_method([](const ProtocolRep& r, std::size_t m) { return r.methods[m].oracle_cvi; });
  s.coverage_mean = per_method([](const ProtocolRep& r, std::size_t m) { return r.methods[m].coverage; });
  s.length_mean = per_method([](const ProtocolRep& r, std::size_t m) { return r.methods[m].avg_length; });
  s.wsc_mean = per_method([](const ProtocolRep& r, std::size_t m) { return r.methods[m].wsc; });
  s.w1_mean = per_method([](const ProtocolRep& r, std::size_t m) { return r.cvp_w1[m]; });
  return s;
}

ProtocolReport run_protocol(const ProtocolConfig& cfg, RngStream rng) {
  if (cfg.methods.empty()) throw ConfigError("protocol: no methods");
  if (cfg.settings.empty()) throw ConfigError("protocol: no settings");
  if (cfg.reps < 1) throw ConfigError("protocol: reps must be >= 1");
  if (!(cfg.alpha > 0 && cfg.alpha < 1)) throw ConfigError("alpha must lie in (0, 1)");
  cfg.est.validate();
  const auto rhos = cfg.rho_values.empty() ? std::vector<double>{cfg.est.rho} : cfg.rho_values;
  const auto ns = cfg.n_values.empty() ? std::vector<std::size_t>{cfg.n_select} : cfg.n_values;
  for (double r : rhos)
    if (!(r > 0 && r < 1)) throw ConfigError("protocol: rho values must lie in (0, 1)");

  ProtocolReport report;
  report.config = cfg;
  for (auto s : cfg.settings)
    for (auto n : ns)
      for (double rho : rhos)
        for (int r = 0; r < cfg.reps; ++r) {
          ProtocolRep rep;
          rep.setting = s;
          rep.n = n;
          rep.rho = rho;
          rep.rep = r;
          report.reps.push_back(rep);
        }

  const std::size_t M = cfg.methods.size();
  parallel_for(report.reps.size(), [&](std::size_t job) {
    ProtocolRep& rep = report.reps[job];
    const RngStream base = rng.derive(to_string(rep.setting)).derive("rep", static_cast<std::uint64_t>(rep.rep));
    const RngStream design = base.derive("design");
    const auto sel = generate(rep.setting, rep.n, cfg.p, base.derive("select", rep.n), 0, &design);
    const auto test = generate(rep.setting, cfg.n_test, cfg.p, base.derive("test"), 0, &design);
    EstimatorConfig est = cfg.est;
    est.rho = rep.rho;

    std::vector<double> est_scores(M), d_true(M);
    for (std::size_t m = 0; m < M; ++m) {
      rep.methods.push_back(run_method(cfg.methods[m], sel, test, cfg, est, base, &rep.cvp_w1));
      est_scores[m] = rep.methods[m].est_cvi;
      // Failed methods rank last; CVI never exceeds 1.
      d_true[m] = rep.methods[m].failed ? 1.0 : rep.methods[m].oracle_cvi;
    }
    rep.rank_est = ranking_from_scores(est_scores);
    rep.rank_oracle = ranking_from_scores(d_true);
    if (M >= 2) rep.tau_w = weighted_kendall_tau(d_true, rep.rank_est, &rep.tau_degenerate);
    rep.ndcg1 = ndcg_at_k(d_true, rep.rank_est, 1);
    rep.ndcg3 = ndcg_at_k(d_true, rep.rank_est, 3);
    rep.hit1 = hit_at_k(rep.rank_oracle, rep.rank_est, 1);
    rep.hit3 = hit_at_k(rep.rank_oracle, rep.rank_est, 3);
  });

  for (std::size_t start = 0; start < report.reps.size(); start += static_cast<std::size_t>(cfg.reps)) {
    std::vector<const ProtocolRep*> slice;
    for (int r = 0; r < cfg.reps; ++r) slice.push_back(&report.reps[start + static_cast<std::size_t>(r)]);
    report.slices.push_back(summarize(slice, M));
  }
  return report;
}

nlohmann::json ProtocolReport::to_json() const {
  nlohmann::json slices_j = nlohmann::json::array();
  for (const auto& s : slices) {
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t m = 0; m < config.methods.size(); ++m)
      per.push_back({{"method", config.methods[m].to_string()},
                     {"est_cvi", json_number(s.est_cvi_mean[m])},
                     {"oracle_cvi", json_number(s.oracle_cvi_mean[m])},
                     {"coverage", json_number(s.coverage_mean[m])},
                     {"avg_length", json_number(s.length_mean[m])},
                     {"wsc", json_number(s.wsc_mean[m])},
                     {"cvp_w1", json_number(s.w1_mean[m])}});
    slices_j.push_back({{"setting", to_string(s.setting)},
                        {"rho", s.rho},
                        {"n", s.n},
                        {"tau_w", {{"mean", s.tau_w_mean}, {"sd", s.tau_w_sd}}},
                        {"ndcg1", {{"mean", s.ndcg1_mean}, {"sd", s.ndcg1_sd}}},
                        {"ndcg3", {{"mean", s.ndcg3_mean}, {"sd", s.ndcg3_sd}}},
                        {"hit1", {{"mean", s.hit1_mean}}},
                        {"hit3", {{"mean", s.hit3_mean}, {"sd", s.hit3_sd}}},
                        {"methods", per}});
  }
  nlohmann::json reps_j = nlohmann::json::array();
  for (const auto& r : reps) {
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : r.methods) {
      nlohmann::json mj{{"est_cvi", json_number(m.est_cvi)}, {"oracle_cvi", json_number(m.oracle_cvi)},
                        {"coverage", json_number(m.coverage)}, {"avg_length", json_number(m.avg_length)},
                        {"wsc", json_number(m.wsc)},           {"failed", m.failed}};
      if (m.failed) mj["error"] = m.error;
      ms.push_back(mj);
    }
    reps_j.push_back({{"setting", to_string(r.setting)},
                      {"rho", r.rho},
                      {"n", r.n},
                      {"rep", r.rep},
                      {"rank_est", r.rank_est},
                      {"rank_oracle", r.rank_oracle},
                      {"tau_w", r.tau_w},
                      {"tau_degenerate", r.tau_degenerate},
                      {"ndcg1", r.ndcg1},
                      {"ndcg3", r.ndcg3},
                      {"hit1", r.hit1},
                      {"hit3", r.hit3},
                      {"cvp_w1", json_numbers(r.cvp_w1)},
                      {"methods", ms}});
  }
  return {{"config", config.to_json()}, {"slices", slices_j}, {"reps", reps_j}};
}

void ProtocolReport::write_rep_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "setting,rho,n,rep,tau_w,ndcg1,ndcg3,hit1,hit3\n";
  for (const auto& r : reps)
    out << to_string(r.setting) << ',' << format_double(r.rho) << ',' << r.n << ',' << r.rep << ','
        << format_double(r.tau_w) << ',' << format_double(r.ndcg1) << ',' << format_double(r.ndcg3) << ','
        << format_double(r.hit1) << ',' << format_double(r.hit3) << '\n';
}

void ProtocolReport::write_method_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "setting,rho,n,rep,method,est_cvi,oracle_cvi,coverage,avg_length,wsc,cvp_w1,failed\n";
  for (const auto& r : reps)
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
      const auto& x = r.methods[m];
      out << to_string(r.setting) << ',' << format_double(r.rho) << ',' << r.n << ',' << r.rep << ','
          << config.methods[m].name() << ',' << format_double(x.est_cvi) << ',' << format_double(x.oracle_cvi)
          << ',' << format_double(x.coverage) << ',' << format_double(x.avg_length) << ','
          << format_double(x.wsc) << ',' << format_double(r.cvp_w1[m]) << ',' << (x.failed ? 1 : 0) << '\n';
    }
}

}  // namespace cpa
