#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "error.hpp"
#include "metrics_report.hpp"
#include "oracles.hpp"

using namespace dynfed;

namespace {

RunHistory sample_history() {
  RunHistory h;
  for (const char* m : {"baseline", "dynbc"}) {
    for (int e = 1; e <= 4; ++e) {
      HistoryRow r;
      r.epoch = e;
      r.stage = e > 2 ? 2 : 1;
      r.method = m;
      r.seed = 7;
      r.shift = "blur";
      r.test_dice = 0.1 * e + (m[0] == 'd' ? 0.0123456789012345 : 1.0 / 3.0) * 0.1;
      r.train_loss = std::exp(-e) / 7.0;
      r.n_rejected_clients = e % 2;
      r.temporal_rollback = e == 3;
      h.rows.push_back(r);
    }
  }
  return h;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("dice matches set counting") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(64), g(64);
    for (int i = 0; i < 64; ++i) {
      p[i] = u(rng);
      g[i] = u(rng) < 0.3 ? 1.0 : 0.0;
    }
    CHECK(dice(p, g) == doctest::Approx(oracle::dice(p, g)).epsilon(1e-15));
    const double s = dice(p, g);
    CHECK((s >= 0.0 && s <= 1.0));
  }
}

TEST_CASE("dice edge cases") {
  const std::vector<double> zeros(16, 0.0), halves(16, 0.5), ones(16, 1.0);
  CHECK(dice(zeros, zeros) == 1.0);
  CHECK(dice(halves, ones) == 0.0);
  CHECK(dice(ones, ones) == 1.0);
  CHECK(dice(ones, zeros) == 0.0);
  const std::vector<double> short_one(4, 1.0);
  CHECK_THROWS_AS(dice(short_one, ones), ContractError);
}

TEST_CASE("dice is symmetric for binary maps") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(32), b(32);
    for (int i = 0; i < 32; ++i) a[i] = rng() % 2, b[i] = rng() % 2;
    CHECK(dice(a, b) == dice(b, a));
  }
}

TEST_CASE("evaluate averages per-patch dice and ignores order") {
  const auto cohort = generate_cohort(3, TextureSpec::bcss_analog(), 3, 2);
  const auto m = ModelParams::initialize(Architecture::desk_segmenter(32), 4);
  const double all = evaluate(m, cohort);
  double manual = 0.0;
  for (const auto& p : cohort) manual += dice(sigmoid(model_forward(m, stack_images(std::span(&p, 1)))).values(), p.mask.values());
  CHECK(all == doctest::Approx(manual / cohort.size()).epsilon(1e-12));
  std::vector<Patch> rev(cohort.rbegin(), cohort.rend());
  CHECK(evaluate(m, rev) == doctest::Approx(all).epsilon(1e-12));
  const std::vector<Patch> single{cohort[0]};
  std::vector<Patch> dup{cohort[0], cohort[0]};
  CHECK(evaluate(m, dup) == doctest::Approx(evaluate(m, single)).epsilon(1e-15));
  CHECK_THROWS_AS(evaluate(m, std::vector<Patch>{}), ContractError);
}

TEST_CASE("history CSV round trip is lossless") {
  const auto h = sample_history();
  const auto text = history_csv(h);
  CHECK(text.rfind(kHistoryHeader, 0) == 0);
  CHECK(parse_history_csv(text) == h);
  const auto path = std::filesystem::temp_directory_path() / "dynfed_test_history.csv";
  write_csv(h, path);
  CHECK(read_csv(path) == h);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(parse_history_csv("nope\n"), ContractError);
  CHECK_THROWS_AS(parse_history_csv(""), ContractError);
}

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("gate log CSV round trip") {
  const std::vector<GateLogRow> rows{{1, "0", 0.125, 0.0, "accept"}, {1, "temporal", 1.0 / 3.0, 0.5, "commit"}};
  const auto text = gate_log_csv(rows);
  CHECK(text.rfind(kGateLogHeader, 0) == 0);
  CHECK(parse_gate_log_csv(text) == rows);
}

TEST_CASE("history validation") {
  auto h = sample_history();
  h.validate();
  h.rows[1].epoch = 1;
  CHECK_THROWS_AS(h.validate(), ContractError);
  h = sample_history();
  h.rows[0].test_dice = 1.5;
  CHECK_THROWS_AS(h.validate(), ContractError);
}

TEST_CASE("summary statistics use the population deviation") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto s = summarize(v);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.n == 4);
  CHECK(summarize(std::vector<double>{0.7}).std == 0.0);
  CHECK_THROWS_AS(summarize(std::vector<double>{}), ContractError);
}

TEST_CASE("summarize_runs groups and guards") {
  std::vector<ScoredRun> runs{{"cd", "bcss", "blur", "baseline", "k", 0, 0.5},
                              {"cd", "bcss", "blur", "dynbc", "k", 0, 0.7},
                              {"cd", "bcss", "blur", "baseline", "k", 1, 0.7}};
  const auto rows = summarize_runs(runs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "baseline");
  CHECK(rows[0].stat.mean == doctest::Approx(0.6));
  CHECK(rows[0].stat.n == 2);
  CHECK(rows[1].stat.n == 1);
  auto dup = runs;
  dup.push_back({"cd", "bcss", "blur", "baseline", "k", 1, 0.1});
  CHECK_THROWS_AS(summarize_runs(dup), ContractError);
  auto mismatch = runs;
  mismatch.push_back({"cd", "bcss", "blur", "baseline", "other", 2, 0.1});
  CHECK_THROWS_AS(summarize_runs(mismatch), ContractError);

  const auto csv = summary_csv(rows);
  CHECK(count(csv, "\n") == 3);
  const auto md = summary_markdown(rows);
  CHECK(md.find("| baseline") != std::string::npos);
}

TEST_CASE("curves render one polyline per method") {
  const auto svg = render_curves(sample_history(), "t<1>");
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(count(svg, "<polyline") == 2);
  CHECK(svg.find("t&lt;1&gt;") != std::string::npos);
  auto one = sample_history();
  one.rows.resize(4);
  CHECK(count(render_curves(one), "<polyline") == 1);
  CHECK_THROWS_AS(render_curves(RunHistory{}), ContractError);
}

TEST_CASE("io errors carry the path") {
  const std::string missing = "/nonexistent-dir/x/history.csv";
  try {
    read_text_file(missing);
    FAIL("expected an IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(missing) != std::string::npos);
  }
  CHECK_THROWS_AS(write_text_file(missing, "x"), IoError);
}
