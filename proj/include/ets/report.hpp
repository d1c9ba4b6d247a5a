#pragma once

#include <filesystem>
#include <string>

#include "ets/samplers.hpp"

namespace ets {

// Run report JSON: config echo, per-step diagnostics, termination cause, the
// RNG seed, and the path of the final-ensemble CSV written next to it.
std::string report_to_json(const RunReport& report, const std::string& config_echo_json,
                           const std::string& ensemble_path);

void save_report_json(const std::filesystem::path& path, const RunReport& report,
                      const std::string& config_echo_json, const std::string& ensemble_path);

}  // namespace ets
