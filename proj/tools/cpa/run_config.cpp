#include "run_config.hpp"

#include <fstream>

#include "cpa/error.hpp"

namespace cpa::cli {

namespace {

nlohmann::json common() {
  return {{"seed", 0}, {"alpha", 0.1}, {"jobs", 1}, {"out", "cpa-out"}};
}

nlohmann::json data_source() {
  return {{"data", ""}, {"target", "y"}, {"setting", ""}, {"n", 2000}, {"p", 10}};
}

nlohmann::json estimator(const std::string& preset) {
  return {{"preset", preset}, {"K", 5}, {"rho", 0.5}, {"calibration", ""}, {"learners", nlohmann::json::array()}};
}

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

nlohmann::json convert(const nlohmann::json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_string()) return text;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("expected true or false");
    }
    std::size_t used = 0;
    if (like.is_number_integer()) {
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw ConfigError("trailing characters");
      return v;
    }
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError("trailing characters");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("--" + dashed(key) + ": cannot read '" + text + "'");
  } catch (const ConfigError& e) {
    throw ConfigError("--" + dashed(key) + ": cannot read '" + text + "' (" + e.what() + ")");
  }
}

// Element type of an array default; arrays of numbers default to reals.
nlohmann::json element_like(const std::string& key) {
  if (key == "n_values") return 0;
  if (key == "rho_values") return 0.0;
  return "";
}

}  // namespace

bool is_runtime_key(const std::string& key) { return key == "jobs"; }

nlohmann::json defaults_for(const std::string& sub) {
  nlohmann::json j = common();
  if (sub == "simulate") {
    j.update({{"setting", "A"}, {"n", 2000}, {"p", 10}, {"replicates", 0}});
  } else if (sub == "audit") {
    j.update(data_source());
    j.update(estimator("baseline"));
    j.update({{"method", "cp-residual"},
              {"gamma", 0.02},
              {"bins", 10},
              {"test", ""},
              {"test_n", 0},
              {"wsc_delta", 0.1},
              {"wsc_directions", 100}});
  } else if (sub == "select") {
    j.update(data_source());
    j.update(estimator("baseline"));
    j.update({{"methods", {"cp-residual", "cp-studentized", "cqr"}}, {"margin", 0.05}});
  } else if (sub == "score") {
    j.update({{"bundle", ""}, {"input", ""}, {"target", "y"}});
  } else if (sub == "bench") {
    j.update(estimator("desk"));
    j.update({{"settings", {"C"}},
              {"methods", {"cp-residual;base=ols", "cp-studentized;base=ols;dispersion=forest:trees=100,depth=6",
                           "cqr", "qrf"}},
              {"reps", 20},
              {"n_select", 2000},
              {"n_test", 2000},
              {"p", 10},
              {"rho_values", nlohmann::json::array()},
              {"n_values", nlohmann::json::array()},
              {"wsc_delta", 0.1},
              {"wsc_directions", 100}});
  } else {
    throw ConfigError("unknown subcommand '" + sub + "'");
  }
  return j;
}

FlagSet::FlagSet(CLI::App& app, const nlohmann::json& defaults) : defaults_(defaults) {
  for (const auto& [key, value] : defaults.items()) {
    auto& slot = raw_[key];
    CLI::Option* opt = app.add_option("--" + dashed(key), slot, "default: " + value.dump());
    if (value.is_array()) {
      opt->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
      if (key != "methods" && key != "learners") opt->delimiter(',');
    } else {
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    options_[key] = opt;
  }
}

nlohmann::json FlagSet::resolve(const std::string& config_path) const {
  nlohmann::json cfg = defaults_;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file " + config_path);
    nlohmann::json file;
    try {
      in >> file;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (key == "subcommand") continue;
      if (!defaults_.contains(key)) throw ConfigError("config file: unknown key '" + key + "'");
      const auto& like = defaults_.at(key);
      const bool ok = (like.is_string() && value.is_string()) || (like.is_boolean() && value.is_boolean()) ||
                      (like.is_number_integer() && value.is_number_integer()) ||
                      (like.is_number_float() && value.is_number()) || (like.is_array() && value.is_array());
      if (!ok) throw ConfigError("config file: key '" + key + "' has the wrong type");
      cfg[key] = value;
    }
  }
  for (const auto& [key, opt] : options_) {
    if (opt->count() == 0) continue;
    const auto& text = raw_.at(key);
    const auto& like = defaults_.at(key);
    if (like.is_array()) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& t : text) arr.push_back(convert(element_like(key), key, t));
      cfg[key] = arr;
    } else {
      cfg[key] = convert(like, key, text.back());
    }
  }
  return cfg;
}

}  // namespace cpa::cli
