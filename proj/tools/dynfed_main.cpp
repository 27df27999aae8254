// dynfed command-line front end. Talks to the library through the C API only.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dynfed/dynfed.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Config keys exposed as --flags (dashes map to underscores).
const std::vector<std::string> kFieldFlags = {
    "scenario",      "method",           "shift",         "metric",          "threshold_factor",
    "seeds",         "epochs",           "eval_epochs",   "clients",         "shifted_clients",
    "stage_boundaries", "refset_size",   "refset_augmented", "dataset",      "patients",
    "patches_per_patient", "patch_size", "lr",            "batch_size",      "local_epochs",
    "warmup_rounds", "delta_floor",      "incremental_reference", "poisoned_clients", "server_lr",
    "rehearsal_fraction", "out_dir"};

struct ConfigDeleter {
  void operator()(dynfed_config* c) const { dynfed_config_destroy(c); }
};
using ConfigHandle = std::unique_ptr<dynfed_config, ConfigDeleter>;

struct CommonArgs {
  std::string config_path;
  std::string preset;
  int jobs = 1;
  bool force = false;
  bool dry_run = false;
  std::string default_scenario = "cd";
  std::map<std::string, std::string> fields;
};

struct CliFailure {
  int code;
  std::string message;
};

std::string flag_name(const std::string& key) {
  std::string out = key;
  for (char& c : out)
    if (c == '_') c = '-';
  return "--" + out;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON configuration file (flags override it)");
  cmd->add_option("--preset", args.preset, "Named preset used as the base configuration");
  cmd->add_option("--jobs", args.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--force", args.force, "Replace a non-empty output directory");
  cmd->add_flag("--dry-run", args.dry_run, "Print the resolved configuration as JSON and exit");
  for (const auto& key : kFieldFlags) {
    cmd->add_option_function<std::string>(
        flag_name(key), [&args, key](const std::string& v) { args.fields[key] = v; }, "Config field " + key);
  }
}

void check(dynfed_status status) {
  if (status == DYNFED_OK) return;
  const int code = status == DYNFED_ERR_INVALID_CONFIG ? kExitConfig : kExitRuntime;
  throw CliFailure{code, dynfed_last_error()};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliFailure{kExitConfig, "config: cannot read " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Base preset: --preset, else the file's "preset", else the scenario's default.
std::string base_preset(const CommonArgs& args, const nlohmann::json& file_doc) {
  if (!args.preset.empty()) return args.preset;
  if (file_doc.is_object() && file_doc.contains("preset") && file_doc["preset"].is_string() &&
      !file_doc["preset"].get<std::string>().empty())
    return file_doc["preset"].get<std::string>();
  std::string scenario = args.default_scenario;
  if (auto it = args.fields.find("scenario"); it != args.fields.end())
    scenario = it->second;
  else if (file_doc.is_object() && file_doc.contains("scenario") && file_doc["scenario"].is_string())
    scenario = file_doc["scenario"].get<std::string>();
  const char* name = dynfed_default_preset(scenario.c_str());
  if (!name) throw CliFailure{kExitConfig, "scenario: unknown scenario '" + scenario + "'"};
  return name;
}

ConfigHandle build_config(const CommonArgs& args) {
  dynfed_config* raw = nullptr;
  check(dynfed_config_create(&raw));
  ConfigHandle cfg(raw);

  std::string file_text;
  nlohmann::json file_doc;
  if (!args.config_path.empty()) {
    file_text = read_file(args.config_path);
    try {
      file_doc = nlohmann::json::parse(file_text);
    } catch (const nlohmann::json::exception& e) {
      throw CliFailure{kExitConfig, "config: " + args.config_path + ": " + e.what()};
    }
  }
  check(dynfed_config_load_preset(cfg.get(), base_preset(args, file_doc).c_str()));
  if (!file_text.empty()) check(dynfed_config_merge_json(cfg.get(), file_text.c_str()));
  for (const auto& [key, value] : args.fields) check(dynfed_config_set(cfg.get(), key.c_str(), value.c_str()));
  check(dynfed_config_validate(cfg.get()));
  return cfg;
}

void print_config(const dynfed_config* cfg) {
  size_t needed = 0;
  check(dynfed_config_to_json(cfg, nullptr, 0, &needed));
  std::string text(needed, '\0');
  check(dynfed_config_to_json(cfg, text.data(), text.size(), &needed));
  text.resize(needed - 1);
  std::printf("%s\n", text.c_str());
}

std::vector<double> parse_factors(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CliFailure{kExitConfig, "factors: cannot parse '" + item + "'"};
    }
  }
  if (out.empty()) throw CliFailure{kExitConfig, "factors: at least one factor is required"};
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated-continual segmentation simulator with prediction-distance update gating"};
  app.set_version_flag("--version", std::string(dynfed_version()));
  app.require_subcommand(1);

  CommonArgs run_args, thr_args, aug_args, trace_args;
  thr_args.default_scenario = "cf";
  std::string factors_text = "1.9,2.0,2.1";

  auto* run = app.add_subcommand("run", "Run every (method x seed) cell and write history, summary, curves");
  add_common(run, run_args);
  auto* thr = app.add_subcommand("ablate-threshold", "Sweep the threshold factor on the forgetting scenario");
  add_common(thr, thr_args);
  thr->add_option("--factors", factors_text, "Comma-separated threshold factors")->capture_default_str();
  auto* aug = app.add_subcommand("ablate-refaug", "Compare augmented and plain reference sets");
  add_common(aug, aug_args);
  auto* trace = app.add_subcommand("gate-trace", "Write per-round gate decisions only");
  add_common(trace, trace_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "dynfed: error: %s\nRun with --help for more information.\n", e.what());
    return kExitConfig;
  }

  try {
    for (const CommonArgs* a : {&run_args, &thr_args, &aug_args, &trace_args}) {
      if (a->dry_run) {
        print_config(build_config(*a).get());
        return 0;
      }
    }
    if (*run) {
      auto cfg = build_config(run_args);
      check(dynfed_run(cfg.get(), run_args.jobs, run_args.force));
    } else if (*thr) {
      auto cfg = build_config(thr_args);
      const auto factors = parse_factors(factors_text);
      check(dynfed_ablate_threshold(cfg.get(), factors.data(), factors.size(), thr_args.jobs, thr_args.force));
    } else if (*aug) {
      auto cfg = build_config(aug_args);
      check(dynfed_ablate_refaug(cfg.get(), aug_args.jobs, aug_args.force));
    } else if (*trace) {
      auto cfg = build_config(trace_args);
      check(dynfed_gate_trace(cfg.get(), trace_args.jobs, trace_args.force));
    }
  } catch (const CliFailure& f) {
    std::fprintf(stderr, "dynfed: error: %s\n", f.message.c_str());
    return f.code;
  }
  return 0;
}
