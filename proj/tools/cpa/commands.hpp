#pragma once

#include <nlohmann/json.hpp>

namespace cpa::cli {

void run_simulate(const nlohmann::json& cfg);
void run_audit(const nlohmann::json& cfg);
void run_select(const nlohmann::json& cfg);
void run_score(const nlohmann::json& cfg);
void run_bench(const nlohmann::json& cfg);

}  // namespace cpa::cli
