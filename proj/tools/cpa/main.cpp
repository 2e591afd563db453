#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "commands.hpp"
#include "cpa/error.hpp"
#include "cpa/parallel.hpp"
#include "run_config.hpp"

namespace {

struct Sub {
  const char* name;
  const char* help;
  void (*run)(const nlohmann::json&);
  CLI::App* app = nullptr;
  std::unique_ptr<cpa::cli::FlagSet> flags;
  std::string config;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction assessment: audit conditional coverage, select interval methods, score inputs"};
  app.require_subcommand(1);
  Sub subs[] = {
      {"simulate", "Write a synthetic dataset with its oracle columns", cpa::cli::run_simulate, nullptr, {}, {}},
      {"audit", "Train a reliability estimator for one method and report CVI diagnostics", cpa::cli::run_audit,
       nullptr, {}, {}},
      {"select", "Pick the candidate method with the lowest mean CVI and save a trust bundle", cpa::cli::run_select,
       nullptr, {}, {}},
      {"score", "Intervals and trust scores for new inputs from a saved bundle", cpa::cli::run_score, nullptr, {},
       {}},
      {"bench", "Selection-deployment protocol on synthetic settings", cpa::cli::run_bench, nullptr, {}, {}},
  };
  try {
    for (auto& s : subs) {
      s.app = app.add_subcommand(s.name, s.help);
      s.app->add_option("--config", s.config, "JSON file with option values; flags override it");
      s.flags = std::make_unique<cpa::cli::FlagSet>(*s.app, cpa::cli::defaults_for(s.name));
    }
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    try {
      const auto cfg = s.flags->resolve(s.config);
      const int jobs = cfg.at("jobs").get<int>();
      if (jobs < 1) throw cpa::ConfigError("--jobs must be >= 1");
      cpa::set_default_jobs(jobs);
      s.run(cfg);
      return 0;
    } catch (const cpa::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
    } catch (const cpa::DataError& e) {
      std::cerr << "data error: " << e.what() << '\n';
      return 3;
    } catch (const cpa::NumericalError& e) {
      std::cerr << "numerical error: " << e.what() << '\n';
      return 4;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << '\n';
      return 4;
    }
  }
  return 2;
}
