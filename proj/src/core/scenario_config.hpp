#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynbc_gate.hpp"
#include "synthdata.hpp"

namespace dynfed {

enum class Scenario { CD, CF, Combined };
enum class Method { Baseline, DynBC, Rehearsal, FedAdam };
enum class ShiftType { Blur, BrightnessStrong, BrightnessMild, Noise };
enum class DatasetAnalog { Bcss, Semicol };

std::string to_string(Scenario s);
std::string to_string(Method m);
std::string to_string(ShiftType s);
std::string to_string(DatasetAnalog d);

Scenario parse_scenario(const std::string& s);
Method parse_method(const std::string& s);
ShiftType parse_shift(const std::string& s);
DistanceMetric parse_metric(const std::string& s);
DatasetAnalog parse_dataset(const std::string& s);

/// Everything needed to reproduce one experiment grid (seeds x methods).
struct ScenarioConfig {
  std::string preset;
  Scenario scenario = Scenario::CD;
  std::vector<Method> methods{Method::DynBC};
  ShiftType shift = ShiftType::BrightnessStrong;
  DistanceMetric metric = DistanceMetric::DiffNorm;
  double threshold_factor = 2.0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int epochs = 60;
  int eval_epochs = 20;  // trailing epochs averaged into the reported score
  int clients = 5;
  int shifted_clients = 3;
  // Global epochs trained on clean data before the shift starts; empty = shifted from the start.
  std::vector<int> stage_boundaries;
  int refset_size = 128;
  bool refset_augmented = true;
  DatasetAnalog dataset = DatasetAnalog::Bcss;
  int patients = 40;
  int patches_per_patient = 16;
  int patch_size = 32;
  double lr = 1e-4;
  int batch_size = 4;
  int local_epochs = 1;
  int warmup_rounds = 1;
  double delta_floor = 1e-6;
  bool incremental_reference = false;
  int poisoned_clients = 0;
  double server_lr = 1e-2;
  double rehearsal_fraction = 0.1;
  std::string out_dir;

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  int shift_start() const { return stage_boundaries.empty() ? 0 : stage_boundaries.front(); }
  int stage_of(int epoch) const { return shift_start() > 0 && epoch > shift_start() ? 2 : 1; }
  bool shift_active(int epoch) const { return epoch > shift_start(); }

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

std::string to_json_string(const ScenarioConfig& config, int indent = 2);
ScenarioConfig config_from_json_string(const std::string& text);
/// Overrides only the keys present in `text`; unknown keys are errors.
void merge_json(ScenarioConfig& config, const std::string& text);
/// Flag-style override: `value` is the command-line text for `key`.
void set_field(ScenarioConfig& config, const std::string& key, const std::string& value);
/// Fields that must agree between seeds of one summary row.
std::string comparison_key(const ScenarioConfig& config);

std::vector<std::string> preset_names();
ScenarioConfig preset(const std::string& name);
/// Preset used as the base when only a scenario is given.
std::string default_preset_for(Scenario scenario);

Augmentation shift_augmentation(ShiftType shift);
/// Reference augmentation pool; Gaussian blur is dropped when the shift itself is a blur.
std::vector<Augmentation> reference_pool(const ScenarioConfig& config);
TextureSpec texture_for(const ScenarioConfig& config);
std::vector<double> split_fractions(DatasetAnalog dataset);

// Desk-scale augmentation constants (patch side 32 instead of 256).
inline constexpr int kShiftBlurKernel = 3;
inline constexpr double kShiftBlurSigma = 1.0;
inline constexpr int kReferenceBlurKernel = 3;
inline constexpr double kReferenceBlurSigma = 0.5;
inline constexpr int kMotionBlurLimit = 5;
inline constexpr double kNoiseVarianceLimit = 1000.0 / (255.0 * 255.0);
inline constexpr double kBrightnessStrong = 2.0;
inline constexpr double kBrightnessMild = 1.2;

}  // namespace dynfed
