#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "federation.hpp"
#include "metrics_report.hpp"
#include "scenario_config.hpp"

namespace dynfed {

struct CommandOptions {
  int jobs = 1;
  // Replace an existing output directory.
  bool force = false;
};

/// Every (method x seed) cell of `config`, in method-major order.
std::vector<RunResult> run_grid(const ScenarioConfig& config, int jobs, bool evaluate = true);

/// Output directory: config value, else $DYNFED_OUT_DIR, else "dynfed_out".
std::filesystem::path resolve_out_dir(const ScenarioConfig& config);

/// Config for `scenario` carrying over the scenario-independent fields of `config`.
ScenarioConfig derive_for_scenario(const ScenarioConfig& config, Scenario scenario);

struct ThresholdAblationRow {
  double factor = 0.0;
  SummaryStat stat;
};

struct RefAugAblationRow {
  bool augmented = true;
  SummaryStat cd;
  SummaryStat cf;
};

// Each command writes its artifacts into a staging directory that is renamed
// onto the output directory only after everything succeeded.
std::vector<SummaryRow> cmd_run(const ScenarioConfig& config, const CommandOptions& options);
std::vector<ThresholdAblationRow> cmd_ablate_threshold(const ScenarioConfig& config, const std::vector<double>& factors,
                                                       const CommandOptions& options);
std::vector<RefAugAblationRow> cmd_ablate_refaug(const ScenarioConfig& config, const CommandOptions& options);
std::vector<GateLogRow> cmd_gate_trace(const ScenarioConfig& config, const CommandOptions& options);

std::string threshold_ablation_csv(const std::vector<ThresholdAblationRow>& rows);
std::string refaug_ablation_csv(const std::vector<RefAugAblationRow>& rows);

const char* version_string();

}  // namespace dynfed
