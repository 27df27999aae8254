#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dynbc_gate.hpp"
#include "metrics_report.hpp"
#include "scenario_config.hpp"
#include "synthdata.hpp"
#include "tensor_nn.hpp"

namespace dynfed {

struct TrainingOptions {
  int batch_size = 4;
  int local_epochs = 1;
  AdamConfig adam{};
  double rehearsal_fraction = 0.1;
};

struct ClientState {
  int id = 0;
  std::vector<Patch> data;
  // Shift applied to training images on the fly while active.
  std::optional<Augmentation> shift;
  AdamState adam;
  std::vector<Patch> rehearsal_buffer;
  std::uint64_t seed = 0;
  bool poisoned = false;
};

struct LocalUpdate {
  ModelParams model;
  double mean_loss = 0.0;
};

/// Mini-batch Adam from `global_model` over the client's shard; the client's Adam state persists.
LocalUpdate client_local_train(ClientState& client, const ModelParams& global_model, const TrainingOptions& options,
                               int round);

/// Freezes a uniformly sampled `fraction` of the client's clean data as its rehearsal buffer.
void fill_rehearsal_buffer(ClientState& client, double fraction, std::uint64_t seed);

/// Equal-weight parameter mean, summed in the given (ascending client-id) order.
ModelParams aggregate_mean(std::span<const ModelParams> models);

struct ServerState {
  ModelParams global_model;
  ModelParams previous_model;  // last committed model; rollback target
  GateState gate;
  std::optional<AdamState> fedadam;
  int round = 0;

  static ServerState start(ModelParams initial, GateState gate);
};

/// Adam step on the pseudo-gradient mean(client) - global.
ModelParams fedadam_server_step(ServerState& server, std::span<const ModelParams> client_models,
                                const AdamConfig& server_adam);

struct RoundOptions {
  Method method = Method::DynBC;
  // Measure each client against the running mean of already accepted clients.
  bool incremental_reference = false;
  // Single-model continual setting: one tracked update check per epoch, logged as "temporal".
  bool temporal_only = false;
  bool poison_active = false;
  AdamConfig server_adam{1e-2, 0.9, 0.999, 1e-8};
  int jobs = 1;
};

struct RoundReport {
  int round = 0;
  std::vector<GateLogRow> gate_rows;
  int n_rejected = 0;
  bool rollback = false;
  double train_loss = 0.0;
  std::vector<Verdict> client_verdicts;
};

/// One global round: local training, gated aggregation, temporal check, commit or rollback.
RoundReport run_global_round(ServerState& server, std::vector<ClientState>& clients, const Tensor& reference_inputs,
                             const TrainingOptions& training, const RoundOptions& options);
RoundReport run_global_round(ServerState& server, std::vector<ClientState>& clients, const ReferenceSet& refset,
                             const TrainingOptions& training, const RoundOptions& options);

struct RunResult {
  Method method = Method::DynBC;
  std::uint64_t seed = 0;
  RunHistory history;
  std::vector<GateLogRow> gate_log;
  double score = 0.0;  // mean test dice over the trailing evaluation window
  ModelParams final_model;
};

struct RunOptions {
  int jobs = 1;
  bool evaluate = true;
};

/// Data, clients and server for one (config, seed) cell; exposed for tests.
struct ScenarioSetup {
  DatasetSplits splits;
  ReferenceSet refset;
  std::vector<ClientState> clients;
  ModelParams initial_model;
  std::vector<bool> shifted;
};

ScenarioSetup prepare_scenario(const ScenarioConfig& config, std::uint64_t seed);
TrainingOptions training_options(const ScenarioConfig& config);
GateState initial_gate(const ScenarioConfig& config);

RunResult run_scenario(const ScenarioConfig& config, Method method, std::uint64_t seed, const RunOptions& options = {});

}  // namespace dynfed
