#pragma once

#include "drmlab/config.hpp"
#include "drmlab/datagen.hpp"
#include "drmlab/net.hpp"
#include "drmlab/trainer.hpp"
#include "drmlab/ttadapt.hpp"
#include "drmlab/ttselect.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

struct MetricsRow {
  std::string experiment;
  std::string dataset;
  std::string target;
  std::string method;    // train method / adapt mode / adapt scope
  std::string strategy;
  double gamma = 0.0;
  bool normalize = false;
  std::uint64_t seed = 0;
  std::string split;
  double accuracy = 0.0;
  double mean_entropy = 0.0;
  double wall_clock = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

/// Shortest decimal text that reads back to the same double; "inf" for +inf.
std::string format_real(double v);

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& is);

/// One training problem: source domains (train and held-out parts) and the
/// targets evaluated against the model trained on them.
struct TaskSplit {
  std::string dataset;
  std::string label;  // identifies the split inside a leave-one-out task
  std::vector<DomainDataset> sources;
  std::vector<DomainDataset> source_eval;
  std::vector<DomainDataset> targets;
  bool images = false;
};

/// Independent seeds for each consumer of randomness in a run.
struct SeedPlan {
  std::uint64_t data, eval, noise, init, train, disc, stream;
};
SeedPlan seed_plan(std::uint64_t seed);

std::vector<TaskSplit> build_task(const RunConfig& cfg, std::uint64_t seed);

ModelConfig model_config_for(const RunConfig& cfg, const TaskSplit& split, bool single_head, std::uint64_t seed);
TrainConfig train_config_for(const RunConfig& cfg, std::uint64_t seed);
SelectionStrategy strategy_from(const RunConfig& cfg);

struct TrainedModel {
  std::string method;  // "drm" or "erm"
  MultiHeadModel model;
  DomainStats stats;
  std::optional<Discriminator> disc;
  std::vector<StepLoss> trace;

  SelectionContext context() const { return {&stats, disc ? &*disc : nullptr}; }
};

TrainedModel train_split(const RunConfig& cfg, const TaskSplit& split, std::uint64_t seed,
                         const std::string& method);
/// Rebuilds the selection artifacts of a loaded model.
TrainedModel attach_model(const RunConfig& cfg, const TaskSplit& split, std::uint64_t seed, MultiHeadModel model);
void ensure_discriminator(const RunConfig& cfg, TrainedModel& tm, const TaskSplit& split, std::uint64_t seed);

struct EvalOutcome {
  MetricsRow row;
  StreamResult stream;
};

EvalOutcome evaluate_target(const RunConfig& cfg, const TrainedModel& tm, const TaskSplit& split,
                            const DomainDataset& target, const SelectionStrategy& strategy, AdaptMode mode,
                            AdaptScope scope, std::uint64_t seed);

/// v_ij = mean entropy of head j's softmax over domain i.
Matrix corr_matrix(const MultiHeadModel& model, std::span<const DomainDataset> domains);
void write_corr_csv(std::ostream& os, const Matrix& v, std::span<const std::string> row_names,
                    std::span<const std::string> col_names);

/// Row domains (sources then targets) and head names of a split's matrix.
struct CorrTable {
  Matrix v;
  std::vector<std::string> rows, cols;
};
CorrTable split_corr(const TrainedModel& tm, const TaskSplit& split);

/// Dispatches one CLI command; returns the process exit code.
int run_experiment(const RunConfig& cfg, std::ostream& log);

std::filesystem::path experiment_dir(const RunConfig& cfg);

}  // namespace drmlab
