#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cpa/conformal.hpp"
#include "cpa/dataset.hpp"
#include "cpa/error.hpp"
#include "cpa/json_number.hpp"
#include "cpa/metrics.hpp"
#include "cpa/reliability.hpp"
#include "cpa/select.hpp"
#include "cpa/synth.hpp"

namespace fs = std::filesystem;

namespace cpa::cli {

namespace {

fs::path out_dir(const nlohmann::json& cfg) {
  fs::path dir = cfg.at("out").get<std::string>();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

double alpha_of(const nlohmann::json& cfg) {
  const double a = cfg.at("alpha").get<double>();
  if (!(a > 0 && a < 1)) throw ConfigError("--alpha must lie in (0, 1)");
  return a;
}

RngStream root(const nlohmann::json& cfg) { return RngStream(cfg.at("seed").get<std::uint64_t>()); }

struct Source {
  Dataset data;
  std::optional<OracleModel> oracle;
  std::optional<Setting> setting;
};

Source load_source(const nlohmann::json& cfg) {
  const auto path = cfg.at("data").get<std::string>();
  const auto setting = cfg.at("setting").get<std::string>();
  if (!path.empty() && !setting.empty()) throw ConfigError("give either --data or --setting, not both");
  Source s;
  if (!path.empty()) {
    s.data = load_csv(path, cfg.at("target").get<std::string>());
    return s;
  }
  if (setting.empty()) throw ConfigError("no data: give --data FILE or --setting A|B|C|D|feasibility");
  s.setting = setting_from_string(setting);
  auto synth = generate(*s.setting, cfg.at("n").get<std::size_t>(), cfg.at("p").get<std::size_t>(),
                        root(cfg).derive("data"));
  s.data = std::move(synth.data);
  s.oracle = std::move(synth.oracle);
  return s;
}

EstimatorConfig estimator_of(const nlohmann::json& cfg) {
  EstimatorConfig e = EstimatorConfig::from_preset(cfg.at("preset").get<std::string>());
  e.K = cfg.at("K").get<int>();
  e.rho = cfg.at("rho").get<double>();
  const auto cal = cfg.at("calibration").get<std::string>();
  if (!cal.empty()) e.calibration = CalibrationSpec::parse(cal);
  if (!cfg.at("learners").empty()) {
    e.learners.clear();
    for (const auto& l : cfg.at("learners")) e.learners.push_back(LearnerConfig::parse(l.get<std::string>()));
  }
  e.validate();
  return e;
}

nlohmann::json echo(const nlohmann::json& cfg, const std::string& sub) {
  nlohmann::json j = cfg;
  j.erase("jobs");
  j["subcommand"] = sub;
  return j;
}

}  // namespace

// ---------------------------------------------------------------- simulate

void run_simulate(const nlohmann::json& cfg) {
  const auto dir = out_dir(cfg);
  const auto setting = setting_from_string(cfg.at("setting").get<std::string>());
  const int reps = cfg.at("replicates").get<int>();
  if (reps < 0) throw ConfigError("--replicates must be >= 0");
  auto synth = generate(setting, cfg.at("n").get<std::size_t>(), cfg.at("p").get<std::size_t>(),
                        root(cfg).derive("data"), reps);
  write_csv(synth.data, dir / "data.csv");
  write_oracle_sidecar(synth.data, dir / "oracle.csv");
  if (!synth.replicates.empty()) {
    std::ofstream out(dir / "replicates.csv");
    out << "id,r,y\n";
    for (std::size_t i = 0; i < synth.replicates.size(); ++i)
      for (std::size_t r = 0; r < synth.replicates[i].size(); ++r)
        out << i << ',' << r << ',' << format_double(synth.replicates[i][r]) << '\n';
  }
  write_json(dir / "resolved_simulate.json", echo(cfg, "simulate"));
  std::cout << "wrote " << synth.data.size() << " rows to " << (dir / "data.csv").string() << '\n';
}

// ---------------------------------------------------------------- audit

void run_audit(const nlohmann::json& cfg) {
  const double alpha = alpha_of(cfg);
  const auto dir = out_dir(cfg);
  const auto src = load_source(cfg);
  const auto cp = MethodConfig::parse(cfg.at("method").get<std::string>());
  const auto est = estimator_of(cfg);
  const double gamma = cfg.at("gamma").get<double>();
  const int bins = cfg.at("bins").get<int>();
  const RngStream rng = root(cfg);
  const OracleModel* oracle = src.oracle ? &*src.oracle : nullptr;

  const auto tr = cpa_train_detailed(src.data, alpha, cp, est, rng.derive("audit"), oracle);
  const auto eta = cross_fitted_reliability(tr, src.data.X);
  const auto cvi = cvi_report(eta, alpha, gamma);
  const auto curve = cvp_curve(eta, alpha);

  nlohmann::json report{{"method", cp.to_string()},
                        {"alpha", alpha},
                        {"n", src.data.size()},
                        {"cvi", cvi.to_json()},
                        {"cvp_crossing", curve.crossing()},
                        {"estimator_flags", tr.estimator.flags()}};
  nlohmann::json members = nlohmann::json::array();
  for (const auto& f : tr.fits)
    members.push_back({{"learner", f.member.is_constant() ? "constant" : f.member.learner().to_string()},
                       {"flag", f.member.flag()},
                       {"label_mean", f.labels.mean()},
                       {"cv_loss", json_numbers(f.cv_loss)},
                       {"selection_folds", f.selection_folds}});
  report["members"] = members;

  // Held-out test rows: from --test, or drawn from the same setting.
  std::optional<Dataset> test;
  const auto test_path = cfg.at("test").get<std::string>();
  const auto test_n = cfg.at("test_n").get<std::size_t>();
  if (!test_path.empty()) {
    test = load_csv(test_path, cfg.at("target").get<std::string>());
  } else if (test_n > 0) {
    if (!src.setting) throw ConfigError("--test-n needs a --setting data source");
    test = generate(*src.setting, test_n, cfg.at("p").get<std::size_t>(), rng.derive("test")).data;
  }

  DiagramBins diagram;
  if (test) {
    const auto pred = fit_method(cp, src.data, alpha, rng.derive("final"), oracle);
    const auto iv = pred->predict(test->X);
    const auto covered = coverage_labels(iv, test->y);
    const auto eta_test = tr.estimator.predict(test->X);
    diagram = reliability_diagram(eta_test, covered, bins);
    nlohmann::json t{{"n", test->size()},
                     {"marginal", marginal_stats(iv, test->y).to_json()},
                     {"cvi", cvi_report(eta_test, alpha, gamma).to_json()},
                     {"ece", diagram.ece},
                     {"predictor_flags", pred->flags()}};
    const int dirs = cfg.at("wsc_directions").get<int>();
    if (dirs > 0)
      t["wsc"] = wsc(test->X, covered, cfg.at("wsc_delta").get<double>(), dirs, rng.derive("wsc")).to_json();
    if (test->oracle) t["oracle_cvi"] = oracle_cvi(*pred, *test, alpha);
    report["test"] = t;
    report["diagram_source"] = "test";
  } else {
    std::vector<double> pooled_eta, pooled_labels;
    for (const auto& f : tr.fits) {
      pooled_eta.insert(pooled_eta.end(), f.oof.begin(), f.oof.end());
      pooled_labels.insert(pooled_labels.end(), f.labels.labels.begin(), f.labels.labels.end());
    }
    diagram = reliability_diagram(pooled_eta, pooled_labels, bins);
    report["diagram_source"] = "cross-fitted";
  }
  report["ece"] = diagram.ece;

  write_json(dir / "report.json", report);
  curve.write_csv(dir / "cvp.csv");
  diagram.write_csv(dir / "diagram.csv");
  {
    std::ofstream out(dir / "labels.csv");
    out << "id,split,I\n";
    for (const auto& f : tr.fits)
      for (std::size_t i = 0; i < f.labels.labels.size(); ++i)
        out << f.labels.ids[i] << ',' << f.labels.split_id << ',' << (f.labels.labels[i] > 0.5 ? 1 : 0) << '\n';
  }
  write_json(dir / "estimator.json", tr.estimator.to_json());
  write_json(dir / "resolved_audit.json", echo(cfg, "audit"));
  std::cout << "CVI " << cvi.cvi << " (under " << cvi.cvi_u << ", over " << cvi.cvi_o << ")\n";
}

// ---------------------------------------------------------------- select

void run_select(const nlohmann::json& cfg) {
  const double alpha = alpha_of(cfg);
  const auto dir = out_dir(cfg);
  const auto src = load_source(cfg);
  std::vector<MethodConfig> candidates;
  for (const auto& m : cfg.at("methods")) candidates.push_back(MethodConfig::parse(m.get<std::string>()));
  if (candidates.empty()) throw ConfigError("select: give at least one --methods entry");
  const auto est = estimator_of(cfg);
  const RngStream rng = root(cfg);
  const OracleModel* oracle = src.oracle ? &*src.oracle : nullptr;

  const auto sel = cc_select(src.data, alpha, candidates, est, rng.derive("select"), cfg.at("margin").get<double>(),
                             oracle);
  for (const auto& w : sel.warnings) std::cerr << "warning: " << w << '\n';
  write_json(dir / "selection.json", sel.to_json());
  write_json(dir / "bundle.json", sel.bundle.to_json());
  write_json(dir / "resolved_select.json", echo(cfg, "select"));
  std::cout << "selected " << sel.winner().to_string() << " (mean CVI " << sel.mean_cvi[sel.selected] << ")\n";
}

// ---------------------------------------------------------------- score

void run_score(const nlohmann::json& cfg) {
  const auto dir = out_dir(cfg);
  const auto bundle_path = cfg.at("bundle").get<std::string>();
  const auto input = cfg.at("input").get<std::string>();
  if (bundle_path.empty()) throw ConfigError("score: --bundle is required");
  if (input.empty()) throw ConfigError("score: --input is required");
  TrustBundle bundle;
  try {
    bundle = TrustBundle::from_json(read_json(bundle_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bundle " + bundle_path + ": " + e.what());
  }
  const Matrix X = load_features_csv(input, cfg.at("target").get<std::string>());
  if (bundle.features != 0 && X.cols() != bundle.features)
    throw DataError("input has " + std::to_string(X.cols()) + " features, the bundle expects " +
                    std::to_string(bundle.features));

  std::ofstream out(dir / "scores.csv");
  if (!out) throw DataError("cannot write scores.csv");
  out << "id,l,u,trust,flag\n";
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const auto t = predict_with_trust(bundle, X.row(i));
    flagged += t.flagged ? 1 : 0;
    out << i << ',' << format_double(t.interval.lower) << ',' << format_double(t.interval.upper) << ','
        << format_double(t.trust) << ',' << (t.flagged ? 1 : 0) << '\n';
  }
  write_json(dir / "resolved_score.json", echo(cfg, "score"));
  std::cout << "scored " << X.rows() << " rows, " << flagged << " flagged below trust "
            << bundle.threshold() << '\n';
}

// ---------------------------------------------------------------- bench

void run_bench(const nlohmann::json& cfg) {
  const auto dir = out_dir(cfg);
  ProtocolConfig pc;
  pc.alpha = alpha_of(cfg);
  pc.settings.clear();
  for (const auto& s : cfg.at("settings")) pc.settings.push_back(setting_from_string(s.get<std::string>()));
  for (const auto& m : cfg.at("methods")) pc.methods.push_back(MethodConfig::parse(m.get<std::string>()));
  pc.reps = cfg.at("reps").get<int>();
  pc.n_select = cfg.at("n_select").get<std::size_t>();
  pc.n_test = cfg.at("n_test").get<std::size_t>();
  pc.p = cfg.at("p").get<std::size_t>();
  pc.est = estimator_of(cfg);
  pc.rho_values = cfg.at("rho_values").get<std::vector<double>>();
  pc.n_values = cfg.at("n_values").get<std::vector<std::size_t>>();
  pc.wsc_delta = cfg.at("wsc_delta").get<double>();
  pc.wsc_directions = cfg.at("wsc_directions").get<int>();

  const auto report = run_protocol(pc, root(cfg).derive("bench"));
  write_json(dir / "protocol.json", report.to_json());
  report.write_rep_csv(dir / "reps.csv");
  report.write_method_csv(dir / "methods.csv");
  write_json(dir / "resolved_bench.json", echo(cfg, "bench"));
  for (const auto& s : report.slices)
    std::cout << "setting " << to_string(s.setting) << " n=" << s.n << " rho=" << s.rho << ": tau_w "
              << s.tau_w_mean << " (" << s.tau_w_sd << "), NDCG@1 " << s.ndcg1_mean << ", Hit@3 " << s.hit3_mean
              << '\n';
}

}  // namespace cpa::cli
