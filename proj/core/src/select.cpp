#include "cpa/select.hpp"

#include <cmath>
#include <limits>

#include "cpa/error.hpp"
#include "cpa/json_number.hpp"
#include "cpa/metrics.hpp"
#include "cpa/parallel.hpp"

namespace cpa {

nlohmann::json TrustBundle::to_json() const {
  return {{"predictor", predictor->to_json()}, {"trust", trust.to_json()}, {"margin", margin}, {"features", features}};
}

TrustBundle TrustBundle::from_json(const nlohmann::json& j) {
  TrustBundle b;
  b.predictor = predictor_from_json(j.at("predictor"));
  b.trust = ReliabilityEstimator::from_json(j.at("trust"));
  b.margin = j.value("margin", 0.05);
  b.features = j.value("features", std::size_t{0});
  return b;
}

double trust_score(const TrustBundle& bundle, std::span<const double> x) { return bundle.trust.predict(x); }

TrustedInterval predict_with_trust(const TrustBundle& bundle, std::span<const double> x) {
  TrustedInterval t;
  t.interval = bundle.predictor->predict(x);
  t.trust = trust_score(bundle, x);
  t.flagged = t.trust < bundle.threshold();
  return t;
}

CcSelection cc_select(const Dataset& d, double alpha, const std::vector<MethodConfig>& candidates,
                      const EstimatorConfig& est, RngStream rng, double trust_margin, const OracleModel* oracle) {
  if (candidates.empty()) throw ConfigError("cc_select: no candidates");
  est.validate();
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(trust_margin >= 0 && trust_margin < 1)) throw ConfigError("trust margin must lie in [0, 1)");
  const std::size_t n = d.size(), K = static_cast<std::size_t>(est.K), M = candidates.size();

  std::vector<SplitPlan> splits;
  for (std::size_t k = 0; k < K; ++k) {
    splits.push_back(split(n, est.rho, rng.derive("split", k)));
    if (splits.back().train.empty() || splits.back().eval.empty())
      throw DataError("cc_select: a split side is empty; more rows are needed");
  }

  CcSelection res;
  res.candidates = candidates;
  res.scores.assign(K, std::vector<double>(M, std::numeric_limits<double>::infinity()));
  res.members.assign(M, std::vector<ReliabilityMember>(K));
  std::vector<std::string> cell_error(K * M);

  parallel_for(K * M, [&](std::size_t job) {
    const std::size_t k = job / M, m = job % M;
    const RngStream cell = rng.derive("cell", hash_combine(k, hash_label(candidates[m].to_string())));
    try {
      const auto pred = fit_method(candidates[m], d.subset(splits[k].train), alpha, cell.derive("cp"), oracle);
      auto fit = fit_member(generate_labels(*pred, d.subset(splits[k].eval), k), est, cell.derive("member"));
      res.scores[k][m] = cvi_report(fit.oof, alpha).cvi;
      res.members[m][k] = std::move(fit.member);
    } catch (const Error& e) {
      cell_error[job] = e.what();
    }
  });
  for (std::size_t job = 0; job < K * M; ++job)
    if (!cell_error[job].empty())
      res.warnings.push_back("candidate " + candidates[job % M].to_string() + " failed on split " +
                             std::to_string(job / M) + ": " + cell_error[job]);

  res.mean_cvi.assign(M, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) res.mean_cvi[m] += res.scores[k][m];
    res.mean_cvi[m] /= static_cast<double>(K);
  }
  bool found = false;
  for (std::size_t m = 0; m < M; ++m) {
    if (!std::isfinite(res.mean_cvi[m])) continue;
    if (!found || res.mean_cvi[m] < res.mean_cvi[res.selected]) {
      res.selected = m;
      found = true;
    }
  }
  if (!found) throw DataError("cc_select: every candidate failed on some split");

  const MethodConfig& win = candidates[res.selected];
  res.bundle.predictor = fit_method(win, d, alpha, rng.derive("final", hash_label(win.to_string())), oracle);
  res.bundle.trust = ReliabilityEstimator(res.members[res.selected], est, win, alpha);
  res.bundle.trust.seed = rng.seed();
  res.bundle.trust.stream_id = rng.stream_id();
  res.bundle.margin = trust_margin;
  res.bundle.features = d.features();
  return res;
}

nlohmann::json CcSelection::to_json() const {
  nlohmann::json cands = nlohmann::json::array(), scores_j = nlohmann::json::array(),
                 failed = nlohmann::json::array();
  for (const auto& c : candidates) cands.push_back(c.to_string());
  for (const auto& row : scores) {
    nlohmann::json r = nlohmann::json::array(), f = nlohmann::json::array();
    for (double v : row) {
      const bool bad = !std::isfinite(v);
      r.push_back(bad ? nlohmann::json(nullptr) : nlohmann::json(v));
      f.push_back(bad);
    }
    scores_j.push_back(r);
    failed.push_back(f);
  }
  nlohmann::json means = nlohmann::json::array();
  for (double v : mean_cvi) means.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  return {{"alpha", bundle.alpha()},
          {"candidates", cands},
          {"scores", scores_j},
          {"failed", failed},
          {"mean_cvi", means},
          {"selected", selected},
          {"winner", winner().to_string()},
          {"warnings", warnings},
          {"trust_margin", bundle.margin}};
}

}  // namespace cpa
