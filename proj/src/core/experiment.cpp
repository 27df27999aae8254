#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <thread>

#include <json.hpp>

#include "error.hpp"

namespace dynfed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class StagedDirectory {
 public:
  StagedDirectory(fs::path target, bool force) : target_(std::move(target)) {
    target_ = target_.lexically_normal();
    if (target_.filename().empty()) target_ = target_.parent_path();
    if (target_.empty()) throw ConfigError("out_dir", "output directory must not be empty");
    std::error_code ec;
    if (fs::exists(target_, ec)) {
      const bool empty_dir = fs::is_directory(target_, ec) && fs::is_empty(target_, ec);
      if (!empty_dir && !force) {
        throw ConfigError("out_dir", target_.string() + " already exists (pass --force to replace it)");
      }
      if (!fs::is_directory(target_, ec)) throw ConfigError("out_dir", target_.string() + " is not a directory");
    }
    staging_ = target_.parent_path() / ("." + target_.filename().string() + ".staging");
    fs::remove_all(staging_, ec);
    if (!fs::create_directories(staging_, ec) || ec) {
      throw IoError(staging_.string() + ": cannot create staging directory (" + ec.message() + ")");
    }
  }

  StagedDirectory(const StagedDirectory&) = delete;
  StagedDirectory& operator=(const StagedDirectory&) = delete;

  ~StagedDirectory() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& path() const { return staging_; }

  void commit() {
    std::error_code ec;
    if (fs::exists(target_, ec)) fs::remove_all(target_, ec);
    if (ec) throw IoError(target_.string() + ": cannot replace (" + ec.message() + ")");
    fs::rename(staging_, target_, ec);
    if (ec) throw IoError(target_.string() + ": cannot move results into place (" + ec.message() + ")");
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

json manifest(const std::string& command, const std::vector<ScenarioConfig>& configs) {
  json j;
  j["command"] = command;
  j["code_version"] = version_string();
  j["architecture"] = Architecture::desk_segmenter(configs.front().patch_size, configs.front().patch_size).describe();
  j["parameter_count"] = Architecture::desk_segmenter(configs.front().patch_size, configs.front().patch_size).parameter_count();
  j["seeds"] = configs.front().seeds;
  json cfgs = json::array();
  json notes = json::array();
  for (const auto& c : configs) {
    cfgs.push_back(json::parse(to_json_string(c)));
    for (auto m : c.methods) {
      if (m == Method::Rehearsal && c.scenario == Scenario::CD) {
        notes.push_back("rehearsal in the cd scenario is a cross-domain baseline (interleaves stored clean samples)");
      }
    }
  }
  j["configs"] = cfgs;
  j["notes"] = notes;
  return j;
}

ScoredRun scored(const ScenarioConfig& config, const RunResult& run) {
  return {to_string(config.scenario), to_string(config.dataset), to_string(config.shift), to_string(run.method),
          comparison_key(config),     run.seed,                    run.score};
}

RunHistory merged_history(const std::vector<RunResult>& runs) {
  RunHistory h;
  for (const auto& r : runs) h.rows.insert(h.rows.end(), r.history.rows.begin(), r.history.rows.end());
  return h;
}

std::string factor_tag(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

SummaryStat stat_of(const std::vector<RunResult>& runs) {
  std::vector<double> scores;
  for (const auto& r : runs) scores.push_back(r.score);
  return summarize(scores);
}

}  // namespace

const char* version_string() { return DYNFED_VERSION_STRING; }

std::vector<RunResult> run_grid(const ScenarioConfig& config, int jobs, bool evaluate) {
  config.validate();
  struct Cell {
    Method method;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto m : config.methods) {
    for (auto s : config.seeds) cells.push_back({m, s});
  }
  std::vector<RunResult> results(cells.size());
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  RunOptions run_options;
  run_options.jobs = std::max(1, jobs / static_cast<int>(cells.size()));
  run_options.evaluate = evaluate;

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    try {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        results[i] = run_scenario(config, cells[i].method, cells[i].seed, run_options);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

fs::path resolve_out_dir(const ScenarioConfig& config) {
  if (!config.out_dir.empty()) return config.out_dir;
  if (const char* env = std::getenv("DYNFED_OUT_DIR"); env && *env) return env;
  return "dynfed_out";
}

ScenarioConfig derive_for_scenario(const ScenarioConfig& config, Scenario scenario) {
  if (config.scenario == scenario) return config;
  ScenarioConfig c = preset(default_preset_for(scenario));
  c.shift = config.shift;
  c.metric = config.metric;
  c.threshold_factor = config.threshold_factor;
  c.seeds = config.seeds;
  c.refset_size = config.refset_size;
  c.refset_augmented = config.refset_augmented;
  c.dataset = config.dataset;
  c.patients = config.patients;
  c.patches_per_patient = config.patches_per_patient;
  c.patch_size = config.patch_size;
  c.lr = config.lr;
  c.batch_size = config.batch_size;
  c.local_epochs = config.local_epochs;
  c.warmup_rounds = config.warmup_rounds;
  c.delta_floor = config.delta_floor;
  c.incremental_reference = config.incremental_reference;
  c.server_lr = config.server_lr;
  c.rehearsal_fraction = config.rehearsal_fraction;
  c.out_dir = config.out_dir;
  // Keep the caller's schedule length; the clean stage keeps its share of it.
  const int preset_epochs = c.epochs;
  c.epochs = config.epochs;
  c.eval_epochs = config.eval_epochs;
  if (!c.stage_boundaries.empty()) {
    int b = config.stage_boundaries.empty()
                ? static_cast<int>(std::lround(static_cast<double>(c.stage_boundaries.front()) * c.epochs / preset_epochs))
                : config.stage_boundaries.front();
    c.stage_boundaries = {std::clamp(b, 1, std::max(1, c.epochs - 1))};
  }
  return c;
}

std::vector<SummaryRow> cmd_run(const ScenarioConfig& config, const CommandOptions& options) {
  config.validate();
  StagedDirectory out(resolve_out_dir(config), options.force);
  const auto runs = run_grid(config, options.jobs);

  std::vector<ScoredRun> scores;
  for (const auto& r : runs) scores.push_back(scored(config, r));
  const auto summary = summarize_runs(scores);

  const RunHistory history = merged_history(runs);
  history.validate();
  write_csv(history, out.path() / "history.csv");
  write_text_file(out.path() / "summary.csv", summary_csv(summary));
  write_text_file(out.path() / "summary.md", summary_markdown(summary));
  write_text_file(out.path() / "curves.svg",
                  render_curves(history, to_string(config.scenario) + " / " + to_string(config.shift)));
  for (const auto& r : runs) {
    if (r.method != Method::DynBC) continue;
    write_text_file(out.path() / ("gate_" + to_string(r.method) + "_seed" + std::to_string(r.seed) + ".csv"),
                    gate_log_csv(r.gate_log));
  }
  write_text_file(out.path() / "manifest.json", manifest("run", {config}).dump(2) + "\n");
  out.commit();
  return summary;
}

std::string threshold_ablation_csv(const std::vector<ThresholdAblationRow>& rows) {
  std::string s = "threshold_factor,n_seeds,mean_dice,std_dice\n";
  for (const auto& r : rows) {
    s += format_double(r.factor) + "," + std::to_string(r.stat.n) + "," + format_double(r.stat.mean) + "," +
         format_double(r.stat.std) + "\n";
  }
  return s;
}

std::string refaug_ablation_csv(const std::vector<RefAugAblationRow>& rows) {
  std::string s = "refset_augmented,n_seeds,cd_mean_dice,cd_std_dice,cf_mean_dice,cf_std_dice\n";
  for (const auto& r : rows) {
    s += std::string(r.augmented ? "true" : "false") + "," + std::to_string(r.cd.n) + "," + format_double(r.cd.mean) +
         "," + format_double(r.cd.std) + "," + format_double(r.cf.mean) + "," + format_double(r.cf.std) + "\n";
  }
  return s;
}

std::vector<ThresholdAblationRow> cmd_ablate_threshold(const ScenarioConfig& config, const std::vector<double>& factors,
                                                       const CommandOptions& options) {
  if (factors.empty()) throw ConfigError("factors", "at least one threshold factor is required");
  for (double f : factors) {
    if (!(f > 1.0)) throw ConfigError("factors", "threshold factor " + format_double(f) + " must exceed 1");
  }
  ScenarioConfig base = derive_for_scenario(config, Scenario::CF);
  base.methods = {Method::DynBC};
  base.validate();
  StagedDirectory out(resolve_out_dir(config), options.force);

  std::vector<ThresholdAblationRow> rows;
  std::vector<ScenarioConfig> configs;
  RunHistory history;
  std::string md = "| threshold factor | seeds | dice (mean ± std) |\n|---|---|---|\n";
  for (double f : factors) {
    ScenarioConfig c = base;
    c.threshold_factor = f;
    const auto runs = run_grid(c, options.jobs);
    rows.push_back({f, stat_of(runs)});
    configs.push_back(c);
    char buf[128];
    std::snprintf(buf, sizeof buf, "| %.2f | %zu | %.3f ± %.3f |\n", f, rows.back().stat.n, rows.back().stat.mean,
                  rows.back().stat.std);
    md += buf;
    write_text_file(out.path() / ("history_th" + factor_tag(f) + ".csv"), history_csv(merged_history(runs)));
  }
  write_text_file(out.path() / "threshold_ablation.csv", threshold_ablation_csv(rows));
  write_text_file(out.path() / "threshold_ablation.md", md);
  write_text_file(out.path() / "manifest.json", manifest("ablate-threshold", configs).dump(2) + "\n");
  out.commit();
  return rows;
}

std::vector<RefAugAblationRow> cmd_ablate_refaug(const ScenarioConfig& config, const CommandOptions& options) {
  ScenarioConfig cd = derive_for_scenario(config, Scenario::CD);
  ScenarioConfig cf = derive_for_scenario(config, Scenario::CF);
  cd.methods = cf.methods = {Method::DynBC};
  cd.validate();
  cf.validate();
  StagedDirectory out(resolve_out_dir(config), options.force);

  std::vector<RefAugAblationRow> rows;
  std::vector<ScenarioConfig> configs;
  std::string md = "| reference augmentation | seeds | CD dice | CF dice |\n|---|---|---|---|\n";
  for (bool augmented : {true, false}) {
    RefAugAblationRow row;
    row.augmented = augmented;
    ScenarioConfig cd_cell = cd, cf_cell = cf;
    cd_cell.refset_augmented = cf_cell.refset_augmented = augmented;
    const auto cd_runs = run_grid(cd_cell, options.jobs);
    const auto cf_runs = run_grid(cf_cell, options.jobs);
    row.cd = stat_of(cd_runs);
    row.cf = stat_of(cf_runs);
    rows.push_back(row);
    configs.push_back(cd_cell);
    configs.push_back(cf_cell);
    const std::string tag = augmented ? "aug" : "noaug";
    write_text_file(out.path() / ("history_cd_" + tag + ".csv"), history_csv(merged_history(cd_runs)));
    write_text_file(out.path() / ("history_cf_" + tag + ".csv"), history_csv(merged_history(cf_runs)));
    char buf[160];
    std::snprintf(buf, sizeof buf, "| %s | %zu | %.3f ± %.3f | %.3f ± %.3f |\n", augmented ? "with" : "without",
                  row.cd.n, row.cd.mean, row.cd.std, row.cf.mean, row.cf.std);
    md += buf;
  }
  write_text_file(out.path() / "refaug_ablation.csv", refaug_ablation_csv(rows));
  write_text_file(out.path() / "refaug_ablation.md", md);
  write_text_file(out.path() / "manifest.json", manifest("ablate-refaug", configs).dump(2) + "\n");
  out.commit();
  return rows;
}

std::vector<GateLogRow> cmd_gate_trace(const ScenarioConfig& config, const CommandOptions& options) {
  ScenarioConfig c = config;
  c.methods = {Method::DynBC};
  c.validate();
  StagedDirectory out(resolve_out_dir(config), options.force);
  const auto runs = run_grid(c, options.jobs, /*evaluate=*/false);
  std::vector<GateLogRow> all;
  for (const auto& r : runs) {
    write_text_file(out.path() / ("gate_trace_seed" + std::to_string(r.seed) + ".csv"), gate_log_csv(r.gate_log));
    all.insert(all.end(), r.gate_log.begin(), r.gate_log.end());
  }
  out.commit();
  return all;
}

}  // namespace dynfed
