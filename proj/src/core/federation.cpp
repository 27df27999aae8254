#include "federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "error.hpp"
#include "rng.hpp"

namespace dynfed {

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results must be written to disjoint slots.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ModelParams poisoned_update(const ClientState& client, const ModelParams& like, int round) {
  ModelParams out = like;
  Rng rng(derive_seed(client.seed, {0x9015, static_cast<std::uint64_t>(round)}));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : out.theta) v = dist(rng);
  return out;
}

TextureSpec reference_texture(const ScenarioConfig& config) {
  TextureSpec spec = TextureSpec::reference_analog();
  const double scale = config.patch_size / 32.0;
  spec.height = spec.width = config.patch_size;
  spec.min_radius *= scale;
  spec.max_radius *= scale;
  return spec;
}

}  // namespace

LocalUpdate client_local_train(ClientState& client, const ModelParams& global_model, const TrainingOptions& options,
                               int round) {
  if (client.data.empty()) throw ContractError("client " + std::to_string(client.id) + " has no training data");
  if (options.local_epochs < 1) throw ContractError("local_epochs must be >= 1");
  if (options.batch_size < 1) throw ContractError("batch_size must be >= 1");

  LocalUpdate update{global_model, 0.0};
  const std::size_t n_params = global_model.theta.size();
  if (client.adam.m.size() != n_params) client.adam = AdamState::for_size(n_params, options.adam);
  client.adam.config = options.adam;

  struct Entry {
    const Patch* patch;
    bool shifted;
  };
  double loss_sum = 0.0;
  int batches = 0;
  for (int e = 0; e < options.local_epochs; ++e) {
    Rng rng(derive_seed(client.seed, {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(e)}));
    std::vector<Entry> entries;
    for (const auto& p : client.data) entries.push_back({&p, client.shift.has_value()});
    if (!client.rehearsal_buffer.empty()) {
      const auto wanted = static_cast<std::size_t>(
          std::max(1.0, std::round(options.rehearsal_fraction * static_cast<double>(client.data.size()))));
      std::vector<std::size_t> idx(client.rehearsal_buffer.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t i = 0; i < std::min(wanted, idx.size()); ++i) {
        entries.push_back({&client.rehearsal_buffer[idx[i]], false});
      }
    }
    std::shuffle(entries.begin(), entries.end(), rng);

    const std::size_t bs = static_cast<std::size_t>(options.batch_size);
    for (std::size_t start = 0; start < entries.size(); start += bs) {
      const std::size_t end = std::min(entries.size(), start + bs);
      std::vector<Patch> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& entry = entries[i];
        if (entry.shifted) {
          const auto aug = client.shift->with_seed(derive_seed(
              client.seed, {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(i)}));
          batch.push_back(apply_augmentation(*entry.patch, aug));
        } else {
          batch.push_back(*entry.patch);
        }
      }
      const auto lg = model_backward(update.model, stack_images(batch), stack_masks(batch));
      adam_step(client.adam, update.model, lg.gradient);
      loss_sum += lg.loss;
      ++batches;
    }
  }
  update.mean_loss = loss_sum / std::max(1, batches);
  return update;
}

void fill_rehearsal_buffer(ClientState& client, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("rehearsal fraction must be in (0, 1]");
  const auto count = static_cast<std::size_t>(
      std::max(1.0, std::round(fraction * static_cast<double>(client.data.size()))));
  std::vector<std::size_t> idx(client.data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, {0x4e4, static_cast<std::uint64_t>(client.id)}));
  std::shuffle(idx.begin(), idx.end(), rng);
  client.rehearsal_buffer.clear();
  for (std::size_t i = 0; i < std::min(count, idx.size()); ++i) client.rehearsal_buffer.push_back(client.data[idx[i]]);
}

ModelParams aggregate_mean(std::span<const ModelParams> models) {
  if (models.empty()) throw ContractError("aggregate_mean: no models");
  ModelParams out = models.front();
  if (models.size() == 1) return out;
  for (std::size_t m = 1; m < models.size(); ++m) {
    if (!models[m].aggregable_with(models.front()) || models[m].theta.size() != out.theta.size()) {
      throw ContractError("aggregate_mean: architecture mismatch");
    }
    for (std::size_t i = 0; i < out.theta.size(); ++i) out.theta[i] += models[m].theta[i];
  }
  const double n = static_cast<double>(models.size());
  for (auto& v : out.theta) v /= n;
  return out;
}

ServerState ServerState::start(ModelParams initial, GateState gate) {
  gate.validate();
  ServerState s;
  s.previous_model = initial;
  s.global_model = std::move(initial);
  s.gate = gate;
  return s;
}

ModelParams fedadam_server_step(ServerState& server, std::span<const ModelParams> client_models,
                                const AdamConfig& server_adam) {
  const ModelParams mean = aggregate_mean(client_models);
  if (!mean.aggregable_with(server.global_model)) throw ContractError("fedadam: architecture mismatch");
  const std::size_t n = server.global_model.theta.size();
  if (!server.fedadam || server.fedadam->m.size() != n) server.fedadam = AdamState::for_size(n, server_adam);
  server.fedadam->config = server_adam;
  std::vector<double> grad(n);
  // Pseudo-gradient delta = mean - global; descending on -delta moves toward the clients.
  for (std::size_t i = 0; i < n; ++i) grad[i] = -(mean.theta[i] - server.global_model.theta[i]);
  ModelParams next = server.global_model;
  adam_step(*server.fedadam, next, grad);
  return next;
}

RoundReport run_global_round(ServerState& server, std::vector<ClientState>& clients, const ReferenceSet& refset,
                             const TrainingOptions& training, const RoundOptions& options) {
  return run_global_round(server, clients, augmented_inputs(refset), training, options);
}

RoundReport run_global_round(ServerState& server, std::vector<ClientState>& clients, const Tensor& reference_inputs,
                             const TrainingOptions& training, const RoundOptions& options) {
  if (clients.empty()) throw ContractError("run_global_round: no clients");
  for (std::size_t i = 1; i < clients.size(); ++i) {
    if (clients[i].id <= clients[i - 1].id) throw ContractError("run_global_round: clients must be in ascending id order");
  }
  server.round += 1;
  RoundReport report;
  report.round = server.round;
  const ModelParams& global = server.global_model;

  std::vector<LocalUpdate> updates(clients.size());
  parallel_for(clients.size(), options.jobs, [&](std::size_t i) {
    if (clients[i].poisoned && options.poison_active) {
      updates[i] = {poisoned_update(clients[i], global, server.round), 0.0};
    } else {
      updates[i] = client_local_train(clients[i], global, training, server.round);
    }
  });
  {
    double loss = 0.0;
    int honest = 0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      if (clients[i].poisoned && options.poison_active) continue;
      loss += updates[i].mean_loss;
      ++honest;
    }
    report.train_loss = honest > 0 ? loss / honest : 0.0;
  }

  ModelParams candidate;
  if (options.method == Method::DynBC) {
    const auto metric = server.gate.metric;
    std::vector<Tensor> client_preds(clients.size());
    parallel_for(clients.size(), options.jobs,
                 [&](std::size_t i) { client_preds[i] = predict_probabilities(updates[i].model, reference_inputs); });
    const Tensor global_pred = predict_probabilities(global, reference_inputs);

    if (options.temporal_only) {
      if (clients.size() != 1) throw ContractError("temporal-only rounds expect exactly one client");
      const double delta = prediction_distance(global_pred, client_preds[0], metric);
      const double before = server.gate.delta_max;
      const auto decision = gate_spatial(server.gate, delta);
      const bool commit = decision.verdict == Verdict::Accept;
      report.gate_rows.push_back({server.round, "temporal", delta, before,
                                  to_string(commit ? TemporalVerdict::Commit : TemporalVerdict::Rollback)});
      report.client_verdicts.push_back(decision.verdict);
      report.rollback = !commit;
      candidate = commit ? updates[0].model : global;
    } else {
      std::vector<ModelParams> accepted;
      Tensor reference_pred = global_pred;
      for (std::size_t i = 0; i < clients.size(); ++i) {
        const double delta = prediction_distance(reference_pred, client_preds[i], metric);
        const auto decision = gate_spatial(server.gate, delta);
        report.gate_rows.push_back(
            {server.round, std::to_string(clients[i].id), delta, decision.delta_max_before, to_string(decision.verdict)});
        report.client_verdicts.push_back(decision.verdict);
        if (decision.verdict == Verdict::Accept) {
          accepted.push_back(updates[i].model);
          if (options.incremental_reference) {
            reference_pred = predict_probabilities(aggregate_mean(accepted), reference_inputs);
          }
        } else {
          ++report.n_rejected;
        }
      }
      candidate = accepted.empty() ? global : aggregate_mean(accepted);
      const double delta_t =
          accepted.empty() ? 0.0 : prediction_distance(global_pred, predict_probabilities(candidate, reference_inputs), metric);
      const double before = server.gate.delta_max;
      const auto verdict = gate_temporal(server.gate, delta_t);
      report.gate_rows.push_back({server.round, "temporal", delta_t, before, to_string(verdict)});
      report.rollback = verdict == TemporalVerdict::Rollback;
    }
  } else {
    std::vector<ModelParams> models;
    models.reserve(updates.size());
    for (auto& u : updates) models.push_back(std::move(u.model));
    candidate = options.method == Method::FedAdam ? fedadam_server_step(server, models, options.server_adam)
                                                  : aggregate_mean(models);
    report.client_verdicts.assign(clients.size(), Verdict::Accept);
  }
  end_round(server.gate);

  server.previous_model = server.global_model;
  if (!report.rollback) server.global_model = std::move(candidate);
  return report;
}

TrainingOptions training_options(const ScenarioConfig& config) {
  TrainingOptions t;
  t.batch_size = config.batch_size;
  t.local_epochs = config.local_epochs;
  t.adam.lr = config.lr;
  t.rehearsal_fraction = config.rehearsal_fraction;
  return t;
}

GateState initial_gate(const ScenarioConfig& config) {
  GateState g;
  g.threshold_factor = config.threshold_factor;
  g.warmup_rounds_remaining = config.warmup_rounds;
  g.delta_floor = config.delta_floor;
  g.metric = config.metric;
  return g;
}

ScenarioSetup prepare_scenario(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  ScenarioSetup setup;
  const auto cohort = generate_cohort(derive_seed(seed, {1}), texture_for(config), config.patients,
                                      config.patches_per_patient);
  Rng split_rng(derive_seed(seed, {2}));
  const auto fractions = split_fractions(config.dataset);
  setup.splits = split_by_patient(cohort, fractions, split_rng);

  Rng ref_rng(derive_seed(seed, {3}));
  const auto pool = reference_pool(config);
  setup.refset = build_reference_set(config.refset_size, ref_rng, pool, reference_texture(config));

  std::vector<std::size_t> order(setup.splits.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng deal_rng(derive_seed(seed, {4}));
  std::shuffle(order.begin(), order.end(), deal_rng);
  setup.clients.resize(static_cast<std::size_t>(config.clients));
  for (int c = 0; c < config.clients; ++c) {
    auto& client = setup.clients[static_cast<std::size_t>(c)];
    client.id = c;
    client.seed = derive_seed(seed, {5, static_cast<std::uint64_t>(c)});
    client.poisoned = c >= config.clients - config.poisoned_clients;
    setup.shifted.push_back(c >= config.clients - config.shifted_clients);
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    setup.clients[i % setup.clients.size()].data.push_back(setup.splits.train[order[i]]);
  }
  for (const auto& client : setup.clients) {
    if (client.data.empty()) throw ConfigError("clients", "more clients than training patches");
  }
  setup.initial_model =
      ModelParams::initialize(Architecture::desk_segmenter(config.patch_size, config.patch_size), derive_seed(seed, {6}));
  return setup;
}

RunResult run_scenario(const ScenarioConfig& config, Method method, std::uint64_t seed, const RunOptions& options) {
  ScenarioSetup setup = prepare_scenario(config, seed);
  RunResult result;
  result.method = method;
  result.seed = seed;

  ServerState server = ServerState::start(setup.initial_model, initial_gate(config));
  const Tensor reference_inputs = augmented_inputs(setup.refset);
  const Tensor test_images = stack_images(setup.splits.test);
  const Tensor test_masks = stack_masks(setup.splits.test);
  const TrainingOptions training = training_options(config);
  RoundOptions round_options;
  round_options.method = method;
  round_options.incremental_reference = config.incremental_reference;
  round_options.temporal_only = config.scenario == Scenario::CF;
  round_options.server_adam.lr = config.server_lr;
  round_options.jobs = options.jobs;
  const Augmentation shift = shift_augmentation(config.shift);

  bool buffers_filled = false;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const bool active = config.shift_active(epoch);
    if (method == Method::Rehearsal && active && !buffers_filled) {
      // Frozen at the stage boundary from clean data only.
      for (auto& c : setup.clients) fill_rehearsal_buffer(c, config.rehearsal_fraction, seed);
      buffers_filled = true;
    }
    for (std::size_t c = 0; c < setup.clients.size(); ++c) {
      setup.clients[c].shift = active && setup.shifted[c] ? std::optional<Augmentation>(shift) : std::nullopt;
    }
    round_options.poison_active = epoch > config.warmup_rounds;
    auto report = run_global_round(server, setup.clients, reference_inputs, training, round_options);
    for (auto& row : report.gate_rows) result.gate_log.push_back(std::move(row));

    HistoryRow row;
    row.epoch = epoch;
    row.stage = config.stage_of(epoch);
    row.method = to_string(method);
    row.seed = seed;
    row.shift = to_string(config.shift);
    row.test_dice = options.evaluate ? evaluate(server.global_model, test_images, test_masks) : 0.0;
    row.train_loss = report.train_loss;
    row.n_rejected_clients = report.n_rejected;
    row.temporal_rollback = report.rollback ? 1 : 0;
    result.history.rows.push_back(std::move(row));
  }

  double window = 0.0;
  const auto& rows = result.history.rows;
  for (std::size_t i = rows.size() - static_cast<std::size_t>(config.eval_epochs); i < rows.size(); ++i) {
    window += rows[i].test_dice;
  }
  result.score = window / config.eval_epochs;
  result.final_model = server.global_model;
  return result;
}

}  // namespace dynfed
