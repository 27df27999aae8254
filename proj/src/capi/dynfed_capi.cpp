#include "dynfed/dynfed.h"

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "dynbc_gate.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "metrics_report.hpp"
#include "scenario_config.hpp"

struct dynfed_config {
  dynfed::ScenarioConfig value;
};

struct dynfed_gate {
  dynfed::GateState state;
};

namespace {

thread_local std::string g_last_error;

dynfed_status fail(dynfed_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Maps the core exception hierarchy onto status codes.
template <typename Fn>
dynfed_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return DYNFED_OK;
  } catch (const dynfed::ConfigError& e) {
    return fail(DYNFED_ERR_INVALID_CONFIG, e.what());
  } catch (const dynfed::IoError& e) {
    return fail(DYNFED_ERR_IO, e.what());
  } catch (const dynfed::ContractError& e) {
    return fail(DYNFED_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DYNFED_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(DYNFED_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(DYNFED_ERR_RUNTIME, "unknown error");
  }
}

#define DYNFED_REQUIRE(ptr)                                                   \
  do {                                                                        \
    if (!(ptr)) return fail(DYNFED_ERR_INVALID_ARGUMENT, #ptr " is null");    \
  } while (0)

}  // namespace

extern "C" {

const char* dynfed_version(void) { return dynfed::version_string(); }

const char* dynfed_last_error(void) { return g_last_error.c_str(); }

dynfed_status dynfed_config_create(dynfed_config** out) {
  DYNFED_REQUIRE(out);
  return guarded([&] { *out = new dynfed_config{}; });
}

void dynfed_config_destroy(dynfed_config* config) { delete config; }

dynfed_status dynfed_config_load_preset(dynfed_config* config, const char* name) {
  DYNFED_REQUIRE(config);
  DYNFED_REQUIRE(name);
  return guarded([&] { config->value = dynfed::preset(name); });
}

dynfed_status dynfed_config_merge_json(dynfed_config* config, const char* json_text) {
  DYNFED_REQUIRE(config);
  DYNFED_REQUIRE(json_text);
  return guarded([&] {
    dynfed::ScenarioConfig updated = config->value;
    dynfed::merge_json(updated, json_text);
    config->value = std::move(updated);
  });
}

dynfed_status dynfed_config_set(dynfed_config* config, const char* key, const char* value) {
  DYNFED_REQUIRE(config);
  DYNFED_REQUIRE(key);
  DYNFED_REQUIRE(value);
  return guarded([&] {
    dynfed::ScenarioConfig updated = config->value;
    dynfed::set_field(updated, key, value);
    config->value = std::move(updated);
  });
}

dynfed_status dynfed_config_validate(const dynfed_config* config) {
  DYNFED_REQUIRE(config);
  return guarded([&] { config->value.validate(); });
}

dynfed_status dynfed_config_to_json(const dynfed_config* config, char* buf, size_t capacity, size_t* required) {
  DYNFED_REQUIRE(config);
  return guarded([&] {
    const std::string text = dynfed::to_json_string(config->value);
    if (required) *required = text.size() + 1;
    if (buf && capacity > 0) {
      const size_t n = std::min(capacity - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

size_t dynfed_preset_count(void) { return dynfed::preset_names().size(); }

const char* dynfed_preset_name(size_t index) {
  static const std::vector<std::string> names = dynfed::preset_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

const char* dynfed_default_preset(const char* scenario) {
  if (!scenario) return nullptr;
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (auto s : {dynfed::Scenario::CD, dynfed::Scenario::CF, dynfed::Scenario::Combined})
      out.push_back(dynfed::default_preset_for(s));
    return out;
  }();
  try {
    return names[static_cast<size_t>(dynfed::parse_scenario(scenario))].c_str();
  } catch (const std::exception&) {
    return nullptr;
  }
}

dynfed_status dynfed_run(const dynfed_config* config, int jobs, int force) {
  DYNFED_REQUIRE(config);
  return guarded([&] { dynfed::cmd_run(config->value, {jobs, force != 0}); });
}

dynfed_status dynfed_ablate_threshold(const dynfed_config* config, const double* factors, size_t n_factors, int jobs,
                                      int force) {
  DYNFED_REQUIRE(config);
  if (n_factors > 0) DYNFED_REQUIRE(factors);
  return guarded([&] {
    std::vector<double> f(factors, factors + n_factors);
    dynfed::cmd_ablate_threshold(config->value, f, {jobs, force != 0});
  });
}

dynfed_status dynfed_ablate_refaug(const dynfed_config* config, int jobs, int force) {
  DYNFED_REQUIRE(config);
  return guarded([&] { dynfed::cmd_ablate_refaug(config->value, {jobs, force != 0}); });
}

dynfed_status dynfed_gate_trace(const dynfed_config* config, int jobs, int force) {
  DYNFED_REQUIRE(config);
  return guarded([&] { dynfed::cmd_gate_trace(config->value, {jobs, force != 0}); });
}

dynfed_status dynfed_gate_create(double threshold_factor, double delta_floor, int warmup_rounds, dynfed_gate** out) {
  DYNFED_REQUIRE(out);
  return guarded([&] {
    dynfed::GateState state;
    state.threshold_factor = threshold_factor;
    state.delta_floor = delta_floor;
    state.warmup_rounds_remaining = warmup_rounds;
    state.validate();
    *out = new dynfed_gate{state};
  });
}

void dynfed_gate_destroy(dynfed_gate* gate) { delete gate; }

dynfed_status dynfed_gate_spatial(dynfed_gate* gate, double delta, int* accepted, double* delta_max_after) {
  DYNFED_REQUIRE(gate);
  return guarded([&] {
    const auto d = dynfed::gate_spatial(gate->state, delta);
    if (accepted) *accepted = d.verdict == dynfed::Verdict::Accept ? 1 : 0;
    if (delta_max_after) *delta_max_after = d.delta_max_after;
  });
}

dynfed_status dynfed_gate_temporal(const dynfed_gate* gate, double delta, int* commit) {
  DYNFED_REQUIRE(gate);
  DYNFED_REQUIRE(commit);
  return guarded([&] { *commit = dynfed::gate_temporal(gate->state, delta) == dynfed::TemporalVerdict::Commit ? 1 : 0; });
}

dynfed_status dynfed_gate_end_round(dynfed_gate* gate) {
  DYNFED_REQUIRE(gate);
  return guarded([&] { dynfed::end_round(gate->state); });
}

dynfed_status dynfed_gate_delta_max(const dynfed_gate* gate, double* out) {
  DYNFED_REQUIRE(gate);
  DYNFED_REQUIRE(out);
  *out = gate->state.delta_max;
  return DYNFED_OK;
}

dynfed_status dynfed_dice(const double* pred, const uint8_t* mask, size_t n, double threshold, double* out) {
  DYNFED_REQUIRE(out);
  if (n > 0) {
    DYNFED_REQUIRE(pred);
    DYNFED_REQUIRE(mask);
  }
  return guarded([&] {
    std::vector<double> gt(n);
    for (size_t i = 0; i < n; ++i) {
      if (mask[i] > 1) throw dynfed::ContractError("dice: mask values must be 0 or 1");
      gt[i] = mask[i];
    }
    *out = dynfed::dice(std::span<const double>(pred, n), gt, threshold);
  });
}

}  // extern "C"
