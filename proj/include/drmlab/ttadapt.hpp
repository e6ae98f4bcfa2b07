#pragma once

#include "drmlab/core.hpp"
#include "drmlab/datagen.hpp"
#include "drmlab/net.hpp"
#include "drmlab/ttselect.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

enum class AdaptMode { None, VanillaRetrain, DrmRetrain, EntropyMin };
enum class AdaptScope { Clf, Full };

std::string to_string(AdaptMode m);
std::string to_string(AdaptScope s);
AdaptMode parse_adapt_mode(const std::string& s);
AdaptScope parse_adapt_scope(const std::string& s);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::None;
  AdaptScope scope = AdaptScope::Clf;
  Index batch_size = 32;
  double adapt_lr = 1e-4;
  Index steps_per_batch = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdaptState {
  MultiHeadModel model;  // working copy; the caller's model is never touched
  Index seen = 0;
  Index correct = 0;
  std::vector<double> entropy_trace;
  Index step = 0;
  std::optional<Index> failed_at;  // adaptation step that produced a non-finite loss
};

struct TraceRow {
  Index batch_index = 0;
  Index n = 0;
  double acc_so_far = 0.0;
  double mean_entropy = 0.0;
  AdaptMode mode = AdaptMode::None;
  AdaptScope scope = AdaptScope::Clf;
};

struct StreamResult {
  std::vector<TraceRow> trace;
  std::vector<int> predictions;   // in stream order
  std::vector<Index> order;       // target row of each prediction
  double accuracy = 0.0;
  AdaptState state;
};

/// Per-head pseudo labels for a batch: labels[k][i] is the target of head k on row i.
using PseudoLabels = std::vector<std::vector<int>>;

/// Batch prediction: alpha, mixed scores, label and mixed-probability entropy per row.
struct BatchPrediction {
  std::vector<Vector> alpha;
  std::vector<int> labels;
  std::vector<double> entropy;
};

BatchPrediction predict_batch(const MultiHeadModel& model, const SelectionContext& ctx,
                              const ForwardRecord& rec, const SelectionStrategy& strategy);

/// vanilla: each head's own argmax; drm: argmax of the alpha-mixed scores for every head.
PseudoLabels make_pseudo_labels(std::span<const Matrix> per_head_logits, std::span<const Vector> alpha,
                                AdaptMode mode, bool normalize_heads = false);

/// One cross-entropy Adam step of every head on its pseudo labels; the
/// encoder is frozen under Clf. Throws NumericError on a non-finite loss
/// before touching the model.
void retrain_step(AdaptState& state, const Matrix& batch, const PseudoLabels& labels, AdaptScope scope,
                  double adapt_lr);

/// Mean entropy of sum_k alpha_k softmax(logits_k) over the rows of a record.
double mixed_entropy(const ForwardRecord& rec, std::span<const Vector> alpha);

/// One Adam step on the mean entropy of the alpha-mixed probabilities.
void entropy_min_step(AdaptState& state, const Matrix& batch, std::span<const Vector> alpha, AdaptScope scope,
                      double adapt_lr);

/// Generic online loop: seeded shuffle, then for each batch `predict` runs
/// before `update`. Returns the traversal order and predictions.
struct StreamHooks {
  std::function<std::vector<int>(const Matrix& batch, std::span<const int> truth, std::vector<double>& entropy)>
      predict;
  std::function<void(const Matrix& batch)> update;
};
struct StreamLoopResult {
  std::vector<Index> order;
  std::vector<int> predictions;
  std::vector<Index> batch_sizes;
  std::vector<double> batch_entropy;
  Index correct = 0;
};
StreamLoopResult stream_loop(const DomainDataset& target, Index batch_size, std::uint64_t seed,
                             const StreamHooks& hooks);

/// Online evaluation with optional adaptation; the source model is copied.
StreamResult stream_eval(const MultiHeadModel& model, const SelectionContext& ctx,
                         const SelectionStrategy& strategy, const DomainDataset& target, const AdaptConfig& cfg);

/// CSV: batch_index,n,acc_so_far,mean_entropy,mode,scope
void write_stream_trace(std::ostream& os, const std::vector<TraceRow>& trace);

}  // namespace drmlab
