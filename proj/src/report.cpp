#include "ets/report.hpp"

#include <nlohmann/json.hpp>

#include "ets/io.hpp"

namespace ets {

std::string report_to_json(const RunReport& report, const std::string& config_echo_json,
                           const std::string& ensemble_path) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(config_echo_json);
  j["seed"] = report.seed;
  j["steps_taken"] = report.steps_taken;
  j["terminated_by"] = to_string(report.terminated_by);
  j["ensemble_csv"] = ensemble_path;
  nlohmann::json diags = nlohmann::json::array();
  for (const auto& d : report.diagnostics) {
    diags.push_back({{"cov_rel_change", d.cov_rel_change},
                     {"mean_norm", d.mean_norm},
                     {"cov_trace", d.cov_trace}});
  }
  j["diagnostics"] = std::move(diags);
  return j.dump(2) + "\n";
}

void save_report_json(const std::filesystem::path& path, const RunReport& report,
                      const std::string& config_echo_json, const std::string& ensemble_path) {
  atomic_write_file(path, report_to_json(report, config_echo_json, ensemble_path));
}

}  // namespace ets
