#pragma once

#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace cpa::cli {

/// Keys a subcommand accepts, with defaults. The JSON type of each default
/// fixes how flag text is converted.
nlohmann::json defaults_for(const std::string& subcommand);

/// Registers one `--key` flag per default (underscores become dashes).
/// Array keys accept repeated flags; all but `methods` also split on commas.
class FlagSet {
 public:
  FlagSet(CLI::App& app, const nlohmann::json& defaults);
  /// defaults <- config file <- flags that were given.
  nlohmann::json resolve(const std::string& config_path) const;

 private:
  nlohmann::json defaults_;
  std::map<std::string, std::vector<std::string>> raw_;
  std::map<std::string, CLI::Option*> options_;
};

/// Keys left out of the echoed configuration (runtime only).
bool is_runtime_key(const std::string& key);

}  // namespace cpa::cli
