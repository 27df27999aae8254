#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "error.hpp"
#include "metrics_report.hpp"
#include "scenario_config.hpp"

using namespace dynfed;

namespace {

std::string field_of(const ScenarioConfig& c) {
  try {
    c.validate();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults and presets validate") {
  ScenarioConfig c;
  c.validate();
  for (const auto& name : preset_names()) {
    const auto p = preset(name);
    CHECK(p.preset == name);
    p.validate();
    CHECK(p.lr == 1e-4);
    CHECK(p.batch_size == 4);
    CHECK(p.threshold_factor == 2.0);
  }
  CHECK(preset("cd-bcss-analog").shifted_clients == 3);
  CHECK(preset("cd-bcss-analog").clients == 5);
  CHECK(preset("cf-analog").clients == 1);
  CHECK(preset("cf-analog").stage_boundaries == std::vector<int>{30});
  CHECK(preset("cf-analog").epochs == 80);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("validation names the offending field") {
  ScenarioConfig c;
  c.threshold_factor = 1.0;
  CHECK(field_of(c) == "threshold_factor");
  c = {};
  c.seeds.clear();
  CHECK(field_of(c) == "seeds");
  c = {};
  c.seeds = {1, 1};
  CHECK(field_of(c) == "seeds");
  c = {};
  c.shifted_clients = 6;
  CHECK(field_of(c) == "shifted_clients");
  c = {};
  c.eval_epochs = c.epochs + 1;
  CHECK(field_of(c) == "eval_epochs");
  c = {};
  c.scenario = Scenario::CF;
  c.clients = 1;
  c.shifted_clients = 1;
  CHECK(field_of(c) == "stage_boundaries");
  c.stage_boundaries = {10, 20};
  CHECK(field_of(c) == "stage_boundaries");
  c.stage_boundaries = {c.epochs};
  CHECK(field_of(c) == "stage_boundaries");
  c = {};
  c.scenario = Scenario::CF;
  c.stage_boundaries = {5};
  CHECK(field_of(c) == "clients");
  c = {};
  c.poisoned_clients = c.clients;
  CHECK(field_of(c) == "poisoned_clients");
  c = {};
  c.methods.clear();
  CHECK(field_of(c) == "method");
  c = {};
  c.rehearsal_fraction = 0.0;
  CHECK(field_of(c) == "rehearsal_fraction");
  c = {};
  c.refset_size = 2;
  CHECK(field_of(c) == "refset_size");
}

TEST_CASE("JSON round trip") {
  auto c = preset("combined-analog");
  c.seeds = {4, 9};
  c.metric = DistanceMetric::DotProduct;
  c.lr = 0.1 + 0.2;
  c.out_dir = "x/y";
  const auto back = config_from_json_string(to_json_string(c));
  CHECK(back == c);
}

TEST_CASE("merge overrides only given keys") {
  auto c = preset("cd-bcss-analog");
  merge_json(c, R"({"epochs": 7, "method": "baseline,dynbc", "seeds": [5]})");
  CHECK(c.epochs == 7);
  CHECK(c.seeds == std::vector<std::uint64_t>{5});
  CHECK(c.methods == std::vector<Method>{Method::Baseline, Method::DynBC});
  CHECK(c.clients == 5);
  CHECK_THROWS_AS(merge_json(c, R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(merge_json(c, R"({"epochs": "many"})"), ConfigError);
  CHECK_THROWS_AS(merge_json(c, R"({"epochs": 2.5})"), ConfigError);
  CHECK_THROWS_AS(merge_json(c, R"({"seeds": [-1]})"), ConfigError);
  CHECK_THROWS_AS(merge_json(c, "[1]"), ConfigError);
  CHECK_THROWS_AS(merge_json(c, "{"), ConfigError);
  CHECK(c.epochs == 7);
}

TEST_CASE("flag-style overrides") {
  ScenarioConfig c;
  set_field(c, "threshold-factor", "2.1");
  CHECK(c.threshold_factor == 2.1);
  set_field(c, "seeds", "3, 4");
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  set_field(c, "stage_boundaries", "12");
  CHECK(c.stage_boundaries == std::vector<int>{12});
  set_field(c, "refset_augmented", "false");
  CHECK_FALSE(c.refset_augmented);
  set_field(c, "metric", "dot");
  CHECK(c.metric == DistanceMetric::DotProduct);
  try {
    set_field(c, "seeds", "");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "seeds");
  }
  CHECK_THROWS_AS(set_field(c, "epochs", "3x"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "method", "dynbc,dynbc"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "nope", "1"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "shift", "sideways"), ConfigError);
}

TEST_CASE("schedule helpers") {
  ScenarioConfig c;
  CHECK(c.shift_active(1));
  CHECK(c.stage_of(1) == 1);
  c.stage_boundaries = {10};
  CHECK_FALSE(c.shift_active(10));
  CHECK(c.shift_active(11));
  CHECK(c.stage_of(10) == 1);
  CHECK(c.stage_of(11) == 2);
}

TEST_CASE("comparison key ignores seeds and method only") {
  auto a = preset("cd-bcss-analog");
  auto b = a;
  b.seeds = {9};
  b.methods = {Method::Baseline};
  b.out_dir = "z";
  CHECK(comparison_key(a) == comparison_key(b));
  b.lr = 2e-4;
  CHECK(comparison_key(a) != comparison_key(b));
}

TEST_CASE("reference pool drops blur for a blur shift") {
  auto c = preset("cf-analog");
  for (const auto& a : reference_pool(c)) CHECK(a.kind != AugKind::GaussianBlur);
  c.shift = ShiftType::Noise;
  bool has_blur = false;
  for (const auto& a : reference_pool(c)) has_blur = has_blur || a.kind == AugKind::GaussianBlur;
  CHECK(has_blur);
  c.refset_augmented = false;
  for (const auto& a : reference_pool(c)) CHECK(a.kind == AugKind::Identity);
}

TEST_CASE("shipped config files equal the built-in presets") {
  const char* root = std::getenv("DYNFED_SOURCE_DIR");
  REQUIRE(root != nullptr);
  for (const auto& name : preset_names()) {
    const auto path = std::filesystem::path(root) / "configs" / (name + ".json");
    INFO(path.string());
    REQUIRE(std::filesystem::exists(path));
    CHECK(config_from_json_string(read_text_file(path)) == preset(name));
  }
}
