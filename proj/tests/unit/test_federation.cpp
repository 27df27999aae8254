#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "federation.hpp"

using namespace dynfed;

namespace {

Architecture scalar_arch() {
  Architecture a;
  a.height = a.width = 1;
  a.layers = {{1, 1, 1, Activation::None}};
  return a;
}

ModelParams scalar_model(double w, double b) { return unflatten(scalar_arch(), {w, b}); }

// Small clients on 16x16 patches so rounds stay fast.
ScenarioConfig toy_config() {
  ScenarioConfig c;
  c.scenario = Scenario::CD;
  c.clients = 5;
  c.shifted_clients = 0;
  c.patients = 10;
  c.patches_per_patient = 4;
  c.patch_size = 16;
  c.refset_size = 6;
  c.epochs = 4;
  c.eval_epochs = 2;
  c.seeds = {0};
  c.lr = 1e-3;
  return c;
}

}  // namespace

TEST_CASE("aggregate_mean reference cases") {
  const auto m = ModelParams::initialize(Architecture::desk_segmenter(8, 8), 1);
  const std::vector<ModelParams> one{m};
  CHECK(aggregate_mean(one) == m);

  const std::vector<ModelParams> two{scalar_model(0, 0), scalar_model(2, 2)};
  CHECK(aggregate_mean(two).theta == std::vector<double>{1, 1});

  const std::vector<ModelParams> copies(7, m);
  const auto avg = aggregate_mean(copies);
  for (std::size_t i = 0; i < m.theta.size(); ++i) CHECK(std::abs(avg.theta[i] - m.theta[i]) <= 1e-15);

  CHECK_THROWS_AS(aggregate_mean(std::vector<ModelParams>{}), ContractError);
  const std::vector<ModelParams> mixed{m, scalar_model(0, 0)};
  CHECK_THROWS_AS(aggregate_mean(mixed), ContractError);
}

TEST_CASE("aggregate_mean is order-insensitive within tolerance and linear in flatten") {
  std::vector<ModelParams> ms;
  for (std::uint64_t s = 0; s < 5; ++s) ms.push_back(ModelParams::initialize(Architecture::desk_segmenter(8, 8), s));
  const auto a = aggregate_mean(ms);
  std::vector<ModelParams> rev(ms.rbegin(), ms.rend());
  const auto b = aggregate_mean(rev);
  for (std::size_t i = 0; i < a.theta.size(); ++i) {
    CHECK(a.theta[i] == doctest::Approx(b.theta[i]).epsilon(1e-12));
    double s = 0;
    for (const auto& m : ms) s += flatten(m)[i];
    CHECK(flatten(a)[i] == doctest::Approx(s / 5).epsilon(1e-12));
  }
}

TEST_CASE("client_local_train contract") {
  auto setup = prepare_scenario(toy_config(), 0);
  TrainingOptions t;
  ClientState empty;
  CHECK_THROWS_AS(client_local_train(empty, setup.initial_model, t, 1), ContractError);
  t.local_epochs = 0;
  CHECK_THROWS_AS(client_local_train(setup.clients[0], setup.initial_model, t, 1), ContractError);
}

TEST_CASE("zero learning rate returns the global model") {
  auto setup = prepare_scenario(toy_config(), 0);
  TrainingOptions t;
  t.adam.lr = 0.0;
  const auto u = client_local_train(setup.clients[0], setup.initial_model, t, 1);
  CHECK(u.model == setup.initial_model);
}

TEST_CASE("local loss decreases over five epochs") {
  auto setup = prepare_scenario(toy_config(), 3);
  TrainingOptions t;
  t.adam.lr = 1e-3;
  auto& client = setup.clients[0];
  const auto images = stack_images(client.data);
  const auto masks = stack_masks(client.data);
  const double before = bce_with_logits(model_forward(setup.initial_model, images), masks);
  ModelParams m = setup.initial_model;
  for (int e = 1; e <= 5; ++e) m = client_local_train(client, m, t, e).model;
  const double after = bce_with_logits(model_forward(m, images), masks);
  CHECK(after < before);
}

TEST_CASE("client Adam state persists across rounds") {
  auto setup = prepare_scenario(toy_config(), 0);
  TrainingOptions t;
  auto& client = setup.clients[1];
  client_local_train(client, setup.initial_model, t, 1);
  const auto steps = client.adam.t;
  CHECK(steps > 0);
  client_local_train(client, setup.initial_model, t, 2);
  CHECK(client.adam.t == 2 * steps);
}

TEST_CASE("fedadam reference cases") {
  auto server = ServerState::start(scalar_model(0.5, -0.25), GateState{});
  const AdamConfig cfg{1e-2, 0.9, 0.999, 1e-8};
  const std::vector<ModelParams> same{server.global_model, server.global_model};
  CHECK(fedadam_server_step(server, same, cfg) == server.global_model);

  auto s2 = ServerState::start(scalar_model(0.0, 0.0), GateState{});
  const std::vector<ModelParams> ahead{scalar_model(1.0, 1.0)};
  const auto next = fedadam_server_step(s2, ahead, cfg);
  CHECK(next.theta[0] == doctest::Approx(1e-2 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(next.theta[1] == doctest::Approx(1e-2 / (1 + 1e-8)).epsilon(1e-12));

  s2.global_model = next;
  const std::vector<ModelParams> further{scalar_model(next.theta[0] + 1.0, next.theta[1] + 1.0)};
  const auto third = fedadam_server_step(s2, further, cfg);
  CHECK(third.theta[0] > next.theta[0]);
}

TEST_CASE("fixed point: unchanged clients give zero distances and a commit") {
  auto setup = prepare_scenario(toy_config(), 0);
  auto server = ServerState::start(setup.initial_model, initial_gate(toy_config()));
  server.gate.warmup_rounds_remaining = 0;
  TrainingOptions t;
  t.adam.lr = 0.0;
  RoundOptions opt;
  const auto r = run_global_round(server, setup.clients, setup.refset, t, opt);
  REQUIRE(r.gate_rows.size() == 6);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.gate_rows[i].delta == 0.0);
  // The candidate is a mean of identical models, exact up to rounding.
  CHECK(r.gate_rows.back().delta <= 1e-12);
  CHECK(r.gate_rows.back().verdict == "commit");
  CHECK(r.n_rejected == 0);
  for (std::size_t i = 0; i < setup.initial_model.theta.size(); ++i)
    CHECK(std::abs(server.global_model.theta[i] - setup.initial_model.theta[i]) <=
          1e-15 * std::max(1.0, std::abs(setup.initial_model.theta[i])));
}

TEST_CASE("a randomized client among five honest ones is rejected") {
  auto cfg = toy_config();
  cfg.clients = 6;
  cfg.poisoned_clients = 1;
  auto setup = prepare_scenario(cfg, 1);
  auto server = ServerState::start(setup.initial_model, initial_gate(cfg));
  TrainingOptions t;
  t.adam.lr = 1e-3;
  RoundOptions opt;
  run_global_round(server, setup.clients, setup.refset, t, opt);
  CHECK_FALSE(server.gate.warmup_active());

  opt.poison_active = true;
  for (int round = 0; round < 3; ++round) {
    const auto honest_models = [&] {
      std::vector<ClientState> copy(setup.clients.begin(), setup.clients.end() - 1);
      std::vector<ModelParams> out;
      for (auto& c : copy) out.push_back(client_local_train(c, server.global_model, t, server.round + 1).model);
      return out;
    }();
    const auto r = run_global_round(server, setup.clients, setup.refset, t, opt);
    REQUIRE(r.client_verdicts.size() == 6);
    CHECK(r.client_verdicts[5] == Verdict::Reject);
    CHECK(r.n_rejected == 1);
    if (!r.rollback) CHECK(server.global_model == aggregate_mean(honest_models));
  }
}

TEST_CASE("baseline round equals plain FedAvg") {
  auto setup = prepare_scenario(toy_config(), 2);
  auto mirror = setup.clients;
  auto server = ServerState::start(setup.initial_model, initial_gate(toy_config()));
  TrainingOptions t;
  t.adam.lr = 1e-3;
  RoundOptions opt;
  opt.method = Method::Baseline;
  ModelParams expected = setup.initial_model;
  for (int round = 1; round <= 3; ++round) {
    std::vector<ModelParams> ms;
    for (auto& c : mirror) ms.push_back(client_local_train(c, expected, t, round).model);
    expected = aggregate_mean(ms);
    run_global_round(server, setup.clients, setup.refset, t, opt);
    CHECK(server.global_model == expected);
  }
}

TEST_CASE("rollback keeps the previous model bit-exactly") {
  auto cfg = toy_config();
  cfg.scenario = Scenario::CF;
  cfg.clients = 1;
  cfg.stage_boundaries = {2};
  auto setup = prepare_scenario(cfg, 0);
  auto server = ServerState::start(setup.initial_model, initial_gate(cfg));
  server.gate.warmup_rounds_remaining = 0;
  server.gate.delta_max = 1e-12;
  server.gate.delta_floor = 0.0;
  TrainingOptions t;
  t.adam.lr = 1e-3;
  RoundOptions opt;
  opt.temporal_only = true;
  const auto before = server.global_model;
  const auto r = run_global_round(server, setup.clients, setup.refset, t, opt);
  CHECK(r.rollback);
  CHECK(r.gate_rows.size() == 1);
  CHECK(r.gate_rows[0].client == "temporal");
  CHECK(r.gate_rows[0].verdict == "rollback");
  CHECK(server.global_model == before);
  CHECK(server.gate.delta_max == 1e-12);
}

TEST_CASE("rehearsal buffer is a frozen clean subset") {
  auto setup = prepare_scenario(toy_config(), 0);
  auto& c = setup.clients[0];
  fill_rehearsal_buffer(c, 0.1, 7);
  const auto expected = static_cast<std::size_t>(std::max(1.0, std::round(0.1 * c.data.size())));
  CHECK(c.rehearsal_buffer.size() == expected);
  for (const auto& p : c.rehearsal_buffer) {
    bool found = false;
    for (const auto& q : c.data) found = found || (q.image == p.image);
    CHECK(found);
  }
  CHECK_THROWS_AS(fill_rehearsal_buffer(c, 0.0, 7), ContractError);
}

TEST_CASE("rounds are identical for any number of jobs") {
  auto cfg = toy_config();
  cfg.poisoned_clients = 1;
  for (auto method : {Method::Baseline, Method::DynBC}) {
    const auto a = run_scenario(cfg, method, 4, {1, true});
    const auto b = run_scenario(cfg, method, 4, {3, true});
    CHECK(a.history == b.history);
    CHECK(a.gate_log == b.gate_log);
    CHECK(a.final_model == b.final_model);
  }
}

TEST_CASE("no shift: the gate stays silent and matches the baseline") {
  auto cfg = toy_config();
  cfg.clients = 3;
  cfg.epochs = 5;
  const auto base = run_scenario(cfg, Method::Baseline, 0);
  const auto gated = run_scenario(cfg, Method::DynBC, 0);
  for (const auto& r : gated.history.rows) {
    CHECK(r.n_rejected_clients == 0);
    CHECK(r.temporal_rollback == 0);
  }
  CHECK(gated.final_model == base.final_model);
  for (std::size_t i = 0; i < base.history.rows.size(); ++i)
    CHECK(gated.history.rows[i].test_dice == base.history.rows[i].test_dice);
}

TEST_CASE("scenario setup partitions the training split") {
  const auto cfg = toy_config();
  const auto setup = prepare_scenario(cfg, 0);
  std::size_t total = 0;
  for (const auto& c : setup.clients) total += c.data.size();
  CHECK(total == setup.splits.train.size());
  CHECK(setup.refset.size() == 6);
  CHECK(setup.clients.back().poisoned == false);
}
