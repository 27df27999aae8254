#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "dynfed/dynfed.h"

namespace fs = std::filesystem;

namespace {

struct Config {
  dynfed_config* raw = nullptr;
  Config() { REQUIRE(dynfed_config_create(&raw) == DYNFED_OK); }
  ~Config() { dynfed_config_destroy(raw); }
};

std::string to_json(const dynfed_config* c) {
  size_t need = 0;
  REQUIRE(dynfed_config_to_json(c, nullptr, 0, &need) == DYNFED_OK);
  std::string s(need, '\0');
  REQUIRE(dynfed_config_to_json(c, s.data(), s.size(), &need) == DYNFED_OK);
  s.resize(need - 1);
  return s;
}

fs::path tmp_root() {
  const char* env = std::getenv("DYNFED_TEST_TMP");
  return env ? fs::path(env) : fs::temp_directory_path() / "dynfed_capi_test";
}

}  // namespace

TEST_CASE("version and error reporting") {
  CHECK(std::string(dynfed_version()).size() > 0);
  CHECK(dynfed_config_create(nullptr) == DYNFED_ERR_INVALID_ARGUMENT);
  CHECK(std::string(dynfed_last_error()).find("null") != std::string::npos);
  Config c;
  CHECK(std::string(dynfed_last_error()).empty());
}

TEST_CASE("config mutation is transactional") {
  Config c;
  const auto before = to_json(c.raw);
  CHECK(dynfed_config_set(c.raw, "epochs", "abc") == DYNFED_ERR_INVALID_CONFIG);
  CHECK(std::string(dynfed_last_error()).rfind("epochs", 0) == 0);
  CHECK(dynfed_config_merge_json(c.raw, R"({"epochs": 5, "bogus": 1})") == DYNFED_ERR_INVALID_CONFIG);
  CHECK(to_json(c.raw) == before);
  CHECK(dynfed_config_set(c.raw, "threshold-factor", "1.0") == DYNFED_OK);
  CHECK(dynfed_config_validate(c.raw) == DYNFED_ERR_INVALID_CONFIG);
  CHECK(std::string(dynfed_last_error()).find("threshold_factor") != std::string::npos);
  CHECK(dynfed_config_set(nullptr, "a", "b") == DYNFED_ERR_INVALID_ARGUMENT);
}

TEST_CASE("to_json truncates safely") {
  Config c;
  size_t need = 0;
  char small[8];
  CHECK(dynfed_config_to_json(c.raw, small, sizeof small, &need) == DYNFED_OK);
  CHECK(need > sizeof small);
  CHECK(std::string(small).size() == sizeof small - 1);
  CHECK(to_json(c.raw).size() == need - 1);
}

TEST_CASE("presets") {
  REQUIRE(dynfed_preset_count() == 4);
  Config c;
  for (size_t i = 0; i < dynfed_preset_count(); ++i) {
    CHECK(dynfed_config_load_preset(c.raw, dynfed_preset_name(i)) == DYNFED_OK);
    CHECK(dynfed_config_validate(c.raw) == DYNFED_OK);
  }
  CHECK(dynfed_preset_name(99) == nullptr);
  CHECK(dynfed_config_load_preset(c.raw, "nope") == DYNFED_ERR_INVALID_CONFIG);
  CHECK(std::string(dynfed_default_preset("cf")) == "cf-analog");
  CHECK(dynfed_default_preset("xyz") == nullptr);
  CHECK(dynfed_default_preset(nullptr) == nullptr);
}

TEST_CASE("gate handle") {
  dynfed_gate* g = nullptr;
  CHECK(dynfed_gate_create(1.0, 1e-6, 1, &g) == DYNFED_ERR_INVALID_ARGUMENT);
  REQUIRE(dynfed_gate_create(2.0, 1e-6, 1, &g) == DYNFED_OK);
  int accepted = -1, commit = -1;
  double dmax = -1;
  CHECK(dynfed_gate_spatial(g, 1.0, &accepted, &dmax) == DYNFED_OK);
  CHECK(accepted == 1);
  CHECK(dmax == 1.0);
  CHECK(dynfed_gate_end_round(g) == DYNFED_OK);
  CHECK(dynfed_gate_spatial(g, 2.5, &accepted, &dmax) == DYNFED_OK);
  CHECK(accepted == 0);
  CHECK(dmax == 1.0);
  CHECK(dynfed_gate_spatial(g, 1.5, &accepted, nullptr) == DYNFED_OK);
  CHECK(accepted == 1);
  CHECK(dynfed_gate_delta_max(g, &dmax) == DYNFED_OK);
  CHECK(dmax == 1.5);
  CHECK(dynfed_gate_temporal(g, 2.9, &commit) == DYNFED_OK);
  CHECK(commit == 1);
  CHECK(dynfed_gate_temporal(g, 3.1, &commit) == DYNFED_OK);
  CHECK(commit == 0);
  CHECK(dynfed_gate_spatial(g, -1.0, &accepted, &dmax) == DYNFED_ERR_INVALID_ARGUMENT);
  dynfed_gate_destroy(g);
}

TEST_CASE("dice") {
  const double pred[4] = {0.9, 0.2, 0.7, 0.5};
  const uint8_t mask[4] = {1, 0, 0, 1};
  double d = -1;
  CHECK(dynfed_dice(pred, mask, 4, 0.5, &d) == DYNFED_OK);
  CHECK(d == doctest::Approx(2.0 / 4.0));
  CHECK(dynfed_dice(nullptr, nullptr, 0, 0.5, &d) == DYNFED_OK);
  CHECK(d == 1.0);
  const uint8_t bad[4] = {2, 0, 0, 0};
  CHECK(dynfed_dice(pred, bad, 4, 0.5, &d) == DYNFED_ERR_INVALID_ARGUMENT);
  CHECK(dynfed_dice(pred, mask, 4, 0.5, nullptr) == DYNFED_ERR_INVALID_ARGUMENT);
}

TEST_CASE("commands report configuration and io failures") {
  Config c;
  const auto root = tmp_root();
  fs::remove_all(root);
  fs::create_directories(root);
  const auto out = (root / "out").string();
  for (auto [k, v] : std::vector<std::pair<const char*, std::string>>{
           {"epochs", "2"}, {"eval_epochs", "1"}, {"patients", "6"}, {"patches_per_patient", "2"},
           {"refset_size", "4"}, {"patch_size", "16"}, {"clients", "2"}, {"shifted_clients", "1"},
           {"seeds", "0"}, {"method", "dynbc"}, {"out_dir", out}}) {
    REQUIRE(dynfed_config_set(c.raw, k, v.c_str()) == DYNFED_OK);
  }
  CHECK(dynfed_gate_trace(c.raw, 1, 0) == DYNFED_OK);
  CHECK(fs::exists(fs::path(out) / "gate_trace_seed0.csv"));
  CHECK(dynfed_gate_trace(c.raw, 1, 0) == DYNFED_ERR_INVALID_CONFIG);
  CHECK(dynfed_run(c.raw, 2, 1) == DYNFED_OK);
  CHECK(fs::exists(fs::path(out) / "history.csv"));
  const double factors[2] = {1.9, 0.9};
  CHECK(dynfed_ablate_threshold(c.raw, factors, 2, 1, 1) == DYNFED_ERR_INVALID_CONFIG);
  CHECK(dynfed_ablate_threshold(c.raw, nullptr, 2, 1, 1) == DYNFED_ERR_INVALID_ARGUMENT);
  CHECK(dynfed_run(nullptr, 1, 0) == DYNFED_ERR_INVALID_ARGUMENT);

  // A regular file where the parent directory should be.
  const auto blocker = root / "file";
  { std::FILE* f = std::fopen(blocker.string().c_str(), "w"); std::fclose(f); }
  REQUIRE(dynfed_config_set(c.raw, "out_dir", (blocker / "sub").string().c_str()) == DYNFED_OK);
  CHECK(dynfed_gate_trace(c.raw, 1, 0) == DYNFED_ERR_IO);
}
