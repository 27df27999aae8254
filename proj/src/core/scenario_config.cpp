#include "scenario_config.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace dynfed {

using nlohmann::json;

namespace {

template <typename Enum>
struct NamedValue {
  const char* name;
  Enum value;
};

constexpr NamedValue<Scenario> kScenarios[] = {{"cd", Scenario::CD}, {"cf", Scenario::CF}, {"combined", Scenario::Combined}};
constexpr NamedValue<Method> kMethods[] = {
    {"baseline", Method::Baseline}, {"dynbc", Method::DynBC}, {"rehearsal", Method::Rehearsal}, {"fedadam", Method::FedAdam}};
constexpr NamedValue<ShiftType> kShifts[] = {{"blur", ShiftType::Blur},
                                             {"brightness_strong", ShiftType::BrightnessStrong},
                                             {"brightness_mild", ShiftType::BrightnessMild},
                                             {"noise", ShiftType::Noise}};
constexpr NamedValue<DistanceMetric> kMetrics[] = {{"diffnorm", DistanceMetric::DiffNorm}, {"dot", DistanceMetric::DotProduct}};
constexpr NamedValue<DatasetAnalog> kDatasets[] = {{"bcss", DatasetAnalog::Bcss}, {"semicol", DatasetAnalog::Semicol}};

template <typename Enum, std::size_t N>
Enum parse_named(const NamedValue<Enum> (&table)[N], const std::string& s, const char* field) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string allowed;
  for (const auto& e : table) allowed += (allowed.empty() ? "" : ", ") + std::string(e.name);
  throw ConfigError(field, "unknown value '" + s + "' (expected one of " + allowed + ")");
}

template <typename Enum, std::size_t N>
std::string name_of(const NamedValue<Enum> (&table)[N], Enum v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "unknown";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ',')) {
    cur.erase(0, cur.find_first_not_of(" \t"));
    cur.erase(cur.find_last_not_of(" \t") + 1);
    items.push_back(cur);
  }
  return items;
}

int parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + s + "'");
  }
}

double parse_real(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + s + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key, "expected true/false, got '" + s + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  if (s.empty()) return seeds;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      if (item.empty() || item[0] == '-') throw std::invalid_argument(item);
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("seeds", "expected non-negative integers, got '" + item + "'");
    }
  }
  return seeds;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> methods;
  for (const auto& n : names) {
    const Method m = parse_method(n);
    if (std::find(methods.begin(), methods.end(), m) != methods.end()) {
      throw ConfigError("method", "method '" + n + "' listed twice");
    }
    methods.push_back(m);
  }
  return methods;
}

json to_json(const ScenarioConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["scenario"] = to_string(c.scenario);
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  j["method"] = methods;
  j["shift"] = to_string(c.shift);
  j["metric"] = to_string(c.metric);
  j["threshold_factor"] = c.threshold_factor;
  j["seeds"] = c.seeds;
  j["epochs"] = c.epochs;
  j["eval_epochs"] = c.eval_epochs;
  j["clients"] = c.clients;
  j["shifted_clients"] = c.shifted_clients;
  j["stage_boundaries"] = c.stage_boundaries;
  j["refset_size"] = c.refset_size;
  j["refset_augmented"] = c.refset_augmented;
  j["dataset"] = to_string(c.dataset);
  j["patients"] = c.patients;
  j["patches_per_patient"] = c.patches_per_patient;
  j["patch_size"] = c.patch_size;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["local_epochs"] = c.local_epochs;
  j["warmup_rounds"] = c.warmup_rounds;
  j["delta_floor"] = c.delta_floor;
  j["incremental_reference"] = c.incremental_reference;
  j["poisoned_clients"] = c.poisoned_clients;
  j["server_lr"] = c.server_lr;
  j["rehearsal_fraction"] = c.rehearsal_fraction;
  j["out_dir"] = c.out_dir;
  return j;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, "wrong JSON type (" + std::string(v.type_name()) + ")");
  }
}

// Numbers in JSON must be integral when the field is an integer.
int get_int(const json& v, const std::string& key) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return static_cast<int>(v.get<double>());
  throw ConfigError(key, "expected an integer");
}

void apply_json(ScenarioConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config", "top-level JSON value must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") c.preset = get_as<std::string>(v, key);
    else if (key == "scenario") c.scenario = parse_scenario(get_as<std::string>(v, key));
    else if (key == "method" || key == "methods") {
      if (v.is_string()) c.methods = parse_methods(split_list(v.get<std::string>()));
      else c.methods = parse_methods(get_as<std::vector<std::string>>(v, "method"));
    } else if (key == "shift") c.shift = parse_shift(get_as<std::string>(v, key));
    else if (key == "metric") c.metric = parse_metric(get_as<std::string>(v, key));
    else if (key == "threshold_factor") c.threshold_factor = get_as<double>(v, key);
    else if (key == "seeds") {
      if (v.is_string()) c.seeds = parse_seeds(v.get<std::string>());
      else {
        c.seeds.clear();
        if (!v.is_array()) throw ConfigError(key, "expected an array of seeds");
        for (const auto& s : v) {
          if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
            throw ConfigError(key, "seeds must be non-negative integers");
          }
          c.seeds.push_back(s.get<std::uint64_t>());
        }
      }
    } else if (key == "epochs") c.epochs = get_int(v, key);
    else if (key == "eval_epochs") c.eval_epochs = get_int(v, key);
    else if (key == "clients") c.clients = get_int(v, key);
    else if (key == "shifted_clients") c.shifted_clients = get_int(v, key);
    else if (key == "stage_boundaries") {
      c.stage_boundaries.clear();
      if (v.is_number()) c.stage_boundaries.push_back(get_int(v, key));
      else {
        if (!v.is_array()) throw ConfigError(key, "expected an array of epochs");
        for (const auto& b : v) c.stage_boundaries.push_back(get_int(b, key));
      }
    } else if (key == "refset_size") c.refset_size = get_int(v, key);
    else if (key == "refset_augmented") c.refset_augmented = get_as<bool>(v, key);
    else if (key == "dataset") c.dataset = parse_dataset(get_as<std::string>(v, key));
    else if (key == "patients") c.patients = get_int(v, key);
    else if (key == "patches_per_patient") c.patches_per_patient = get_int(v, key);
    else if (key == "patch_size") c.patch_size = get_int(v, key);
    else if (key == "lr") c.lr = get_as<double>(v, key);
    else if (key == "batch_size") c.batch_size = get_int(v, key);
    else if (key == "local_epochs") c.local_epochs = get_int(v, key);
    else if (key == "warmup_rounds") c.warmup_rounds = get_int(v, key);
    else if (key == "delta_floor") c.delta_floor = get_as<double>(v, key);
    else if (key == "incremental_reference") c.incremental_reference = get_as<bool>(v, key);
    else if (key == "poisoned_clients") c.poisoned_clients = get_int(v, key);
    else if (key == "server_lr") c.server_lr = get_as<double>(v, key);
    else if (key == "rehearsal_fraction") c.rehearsal_fraction = get_as<double>(v, key);
    else if (key == "out_dir") c.out_dir = get_as<std::string>(v, key);
    else throw ConfigError(key, "unknown configuration key");
  }
}

}  // namespace

std::string to_string(Scenario s) { return name_of(kScenarios, s); }
std::string to_string(Method m) { return name_of(kMethods, m); }
std::string to_string(ShiftType s) { return name_of(kShifts, s); }
std::string to_string(DatasetAnalog d) { return name_of(kDatasets, d); }

Scenario parse_scenario(const std::string& s) { return parse_named(kScenarios, s, "scenario"); }
Method parse_method(const std::string& s) { return parse_named(kMethods, s, "method"); }
ShiftType parse_shift(const std::string& s) { return parse_named(kShifts, s, "shift"); }
DistanceMetric parse_metric(const std::string& s) { return parse_named(kMetrics, s, "metric"); }
DatasetAnalog parse_dataset(const std::string& s) { return parse_named(kDatasets, s, "dataset"); }

void ScenarioConfig::validate() const {
  if (methods.empty()) throw ConfigError("method", "at least one method is required");
  if (!(threshold_factor > 1.0) || !std::isfinite(threshold_factor)) {
    throw ConfigError("threshold_factor", "must be a finite number > 1");
  }
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (std::count(seeds.begin(), seeds.end(), seeds[i]) > 1) throw ConfigError("seeds", "duplicate seed");
  }
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (eval_epochs < 1 || eval_epochs > epochs) throw ConfigError("eval_epochs", "must be in [1, epochs]");
  if (clients < 1) throw ConfigError("clients", "must be >= 1");
  if (shifted_clients < 0 || shifted_clients > clients) throw ConfigError("shifted_clients", "must be in [0, clients]");
  if (scenario == Scenario::CF && clients != 1) throw ConfigError("clients", "the cf scenario trains a single model (clients = 1)");
  if (stage_boundaries.size() > 1) throw ConfigError("stage_boundaries", "at most one stage boundary is supported");
  for (int b : stage_boundaries) {
    if (b < 1 || b >= epochs) throw ConfigError("stage_boundaries", "boundary must lie in [1, epochs - 1]");
  }
  if (scenario != Scenario::CD && stage_boundaries.empty()) {
    throw ConfigError("stage_boundaries", "cf and combined scenarios need a clean first stage");
  }
  if (refset_size < 1) throw ConfigError("refset_size", "must be >= 1");
  if (refset_augmented && refset_size < 3) throw ConfigError("refset_size", "must cover every reference augmentation kind");
  if (patch_size < 8) throw ConfigError("patch_size", "must be >= 8");
  if (patients < 3) throw ConfigError("patients", "need at least 3 patients for train/test/val");
  if (patches_per_patient < 1) throw ConfigError("patches_per_patient", "must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be a finite non-negative number");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs", "must be >= 1");
  if (warmup_rounds < 0) throw ConfigError("warmup_rounds", "must be >= 0");
  if (!(delta_floor >= 0.0)) throw ConfigError("delta_floor", "must be >= 0");
  if (poisoned_clients < 0 || poisoned_clients >= clients) {
    throw ConfigError("poisoned_clients", "must be in [0, clients - 1]");
  }
  if (!(server_lr > 0.0)) throw ConfigError("server_lr", "must be > 0");
  if (!(rehearsal_fraction > 0.0 && rehearsal_fraction <= 1.0)) {
    throw ConfigError("rehearsal_fraction", "must be in (0, 1]");
  }
}

std::string to_json_string(const ScenarioConfig& config, int indent) { return to_json(config).dump(indent); }

ScenarioConfig config_from_json_string(const std::string& text) {
  ScenarioConfig c;
  merge_json(c, text);
  return c;
}

void merge_json(ScenarioConfig& config, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  apply_json(config, j);
}

void set_field(ScenarioConfig& c, const std::string& raw_key, const std::string& value) {
  std::string key = raw_key;
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "seeds") {
    c.seeds = parse_seeds(value);
    if (c.seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  } else if (key == "method" || key == "methods") {
    c.methods = parse_methods(split_list(value));
  } else if (key == "stage_boundaries") {
    c.stage_boundaries.clear();
    if (!value.empty()) {
      for (const auto& item : split_list(value)) c.stage_boundaries.push_back(parse_int(key, item));
    }
  } else if (key == "scenario") c.scenario = parse_scenario(value);
  else if (key == "shift") c.shift = parse_shift(value);
  else if (key == "metric") c.metric = parse_metric(value);
  else if (key == "dataset") c.dataset = parse_dataset(value);
  else if (key == "preset") c.preset = value;
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "threshold_factor") c.threshold_factor = parse_real(key, value);
  else if (key == "lr") c.lr = parse_real(key, value);
  else if (key == "delta_floor") c.delta_floor = parse_real(key, value);
  else if (key == "server_lr") c.server_lr = parse_real(key, value);
  else if (key == "rehearsal_fraction") c.rehearsal_fraction = parse_real(key, value);
  else if (key == "refset_augmented") c.refset_augmented = parse_bool(key, value);
  else if (key == "incremental_reference") c.incremental_reference = parse_bool(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "eval_epochs") c.eval_epochs = parse_int(key, value);
  else if (key == "clients") c.clients = parse_int(key, value);
  else if (key == "shifted_clients") c.shifted_clients = parse_int(key, value);
  else if (key == "refset_size") c.refset_size = parse_int(key, value);
  else if (key == "patients") c.patients = parse_int(key, value);
  else if (key == "patches_per_patient") c.patches_per_patient = parse_int(key, value);
  else if (key == "patch_size") c.patch_size = parse_int(key, value);
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "local_epochs") c.local_epochs = parse_int(key, value);
  else if (key == "warmup_rounds") c.warmup_rounds = parse_int(key, value);
  else if (key == "poisoned_clients") c.poisoned_clients = parse_int(key, value);
  else throw ConfigError(key, "unknown configuration key");
}

std::string comparison_key(const ScenarioConfig& config) {
  json j = to_json(config);
  j.erase("seeds");
  j.erase("method");
  j.erase("out_dir");
  j.erase("preset");
  return j.dump();
}

std::vector<std::string> preset_names() {
  return {"cd-bcss-analog", "cd-semicol-analog", "cf-analog", "combined-analog"};
}

ScenarioConfig preset(const std::string& name) {
  ScenarioConfig c;
  c.preset = name;
  c.seeds = {0, 1, 2};
  c.methods = {Method::Baseline, Method::DynBC, Method::Rehearsal};
  if (name == "cd-bcss-analog") {
    c.scenario = Scenario::CD;
    c.dataset = DatasetAnalog::Bcss;
    c.shift = ShiftType::BrightnessStrong;
    c.clients = 5;
    c.shifted_clients = 3;
    c.epochs = 60;
  } else if (name == "cd-semicol-analog") {
    c.scenario = Scenario::CD;
    c.dataset = DatasetAnalog::Semicol;
    c.shift = ShiftType::BrightnessMild;
    c.clients = 4;
    c.shifted_clients = 2;
    c.epochs = 52;
  } else if (name == "cf-analog") {
    c.scenario = Scenario::CF;
    c.dataset = DatasetAnalog::Bcss;
    c.shift = ShiftType::Blur;
    c.clients = 1;
    c.shifted_clients = 1;
    c.epochs = 80;
    c.stage_boundaries = {30};
  } else if (name == "combined-analog") {
    c.scenario = Scenario::Combined;
    c.dataset = DatasetAnalog::Bcss;
    c.shift = ShiftType::BrightnessStrong;
    c.clients = 4;
    c.shifted_clients = 3;
    c.epochs = 90;
    c.stage_boundaries = {30};
    c.methods = {Method::Baseline, Method::DynBC, Method::Rehearsal, Method::FedAdam};
  } else {
    std::string names;
    for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("preset", "unknown preset '" + name + "' (expected one of " + names + ")");
  }
  return c;
}

std::string default_preset_for(Scenario scenario) {
  switch (scenario) {
    case Scenario::CD: return "cd-bcss-analog";
    case Scenario::CF: return "cf-analog";
    case Scenario::Combined: return "combined-analog";
  }
  return "cd-bcss-analog";
}

Augmentation shift_augmentation(ShiftType shift) {
  switch (shift) {
    case ShiftType::Blur: return Augmentation::gaussian_blur(kShiftBlurKernel, kShiftBlurSigma);
    case ShiftType::BrightnessStrong: return Augmentation::brightness(kBrightnessStrong);
    case ShiftType::BrightnessMild: return Augmentation::brightness(kBrightnessMild);
    case ShiftType::Noise: return Augmentation::gaussian_noise(kNoiseVarianceLimit);
  }
  return Augmentation::identity();
}

std::vector<Augmentation> reference_pool(const ScenarioConfig& config) {
  if (!config.refset_augmented) return {Augmentation::identity()};
  std::vector<Augmentation> pool;
  if (config.shift != ShiftType::Blur) {
    pool.push_back(Augmentation::gaussian_blur(kReferenceBlurKernel, kReferenceBlurSigma));
  }
  pool.push_back(Augmentation::motion_blur(kMotionBlurLimit));
  pool.push_back(Augmentation::gaussian_noise(kNoiseVarianceLimit));
  return pool;
}

TextureSpec texture_for(const ScenarioConfig& config) {
  TextureSpec spec = config.dataset == DatasetAnalog::Bcss ? TextureSpec::bcss_analog() : TextureSpec::semicol_analog();
  const double scale = config.patch_size / 32.0;
  spec.height = spec.width = config.patch_size;
  spec.min_radius *= scale;
  spec.max_radius *= scale;
  return spec;
}

std::vector<double> split_fractions(DatasetAnalog dataset) {
  if (dataset == DatasetAnalog::Bcss) return {0.6, 0.3, 0.1};
  return {0.7, 0.2, 0.1};
}

}  // namespace dynfed
