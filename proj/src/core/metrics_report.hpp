#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "synthdata.hpp"
#include "tensor_nn.hpp"

namespace dynfed {

/// Dice of `pred_probs > threshold` against a binary mask; 1.0 when both are empty.
double dice(std::span<const double> pred_probs, std::span<const double> gt_mask, double threshold = 0.5);
double dice(const Tensor& pred_probs, const Tensor& gt_mask, double threshold = 0.5);

/// Mean per-patch dice of `model` on clean test patches.
double evaluate(const ModelParams& model, std::span<const Patch> testset);
/// Same, on pre-stacked images/masks [N,1,H,W].
double evaluate(const ModelParams& model, const Tensor& images, const Tensor& masks);

inline constexpr const char* kHistoryHeader =
    "epoch,stage,method,seed,shift,test_dice,train_loss,n_rejected_clients,temporal_rollback";
inline constexpr const char* kGateLogHeader = "round,client_id,delta,delta_max_before,verdict";

struct HistoryRow {
  int epoch = 0;
  int stage = 1;
  std::string method;
  std::uint64_t seed = 0;
  std::string shift;
  double test_dice = 0.0;
  double train_loss = 0.0;
  int n_rejected_clients = 0;
  int temporal_rollback = 0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct RunHistory {
  std::vector<HistoryRow> rows;

  /// Epochs strictly increasing per (method, seed); dice within [0,1].
  void validate() const;
  friend bool operator==(const RunHistory&, const RunHistory&) = default;
};

struct GateLogRow {
  int round = 0;
  std::string client;  // client id or "temporal"
  double delta = 0.0;
  double delta_max_before = 0.0;
  std::string verdict;

  friend bool operator==(const GateLogRow&, const GateLogRow&) = default;
};

/// Decimal text with 17 significant digits; parses back to the same double.
std::string format_double(double v);

std::string history_csv(const RunHistory& history);
RunHistory parse_history_csv(const std::string& text);
void write_csv(const RunHistory& history, const std::filesystem::path& path);
RunHistory read_csv(const std::filesystem::path& path);

std::string gate_log_csv(std::span<const GateLogRow> rows);
std::vector<GateLogRow> parse_gate_log_csv(const std::string& text);

struct SummaryStat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;
};

SummaryStat summarize(std::span<const double> values);

/// One finished (scenario, method, seed) cell reduced to its evaluation-window score.
struct ScoredRun {
  std::string scenario;
  std::string dataset;
  std::string shift;
  std::string method;
  std::string config_key;  // everything else that must match across seeds
  std::uint64_t seed = 0;
  double score = 0.0;
};

struct SummaryRow {
  std::string scenario;
  std::string dataset;
  std::string shift;
  std::string method;
  SummaryStat stat;
};

/// Groups by (scenario, dataset, shift, method) in first-seen order.
std::vector<SummaryRow> summarize_runs(std::span<const ScoredRun> runs);

std::string summary_csv(std::span<const SummaryRow> rows);
std::string summary_markdown(std::span<const SummaryRow> rows);

/// Standalone SVG 1.1 with one polyline per method (seed-averaged dice per epoch).
std::string render_curves(const RunHistory& history, const std::string& title = "");

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace dynfed
