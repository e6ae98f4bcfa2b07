#pragma once

#include "drmlab/core.hpp"
#include "drmlab/net.hpp"
#include "drmlab/trainer.hpp"

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

enum class SelectKind { PEM, CSM, L2SM, NNM, Uniform };

std::string to_string(SelectKind k);
SelectKind parse_select_kind(const std::string& s);

inline constexpr double kGammaInfinity = std::numeric_limits<double>::infinity();

struct SelectionStrategy {
  SelectKind kind = SelectKind::PEM;
  double gamma = kGammaInfinity;  // +inf selects the argmin head outright
  bool normalize_heads = false;
  double score_floor = 1e-8;

  void validate() const;
};

struct MixWeights {
  Vector alpha;
};

/// Shannon entropy of each head's probability vector.
Vector pem_scores(std::span<const Vector> per_head_probs);

enum class SimilarityMetric { Cosine, L2 };

struct SimilarityScores {
  Vector H;
  std::vector<bool> fell_back_to_l2;  // zero-norm vectors under cosine
};

/// Distance from a feature to each anchor: 1 - cos, or the Euclidean norm.
SimilarityScores sm_scores(const Vector& feature, std::span<const Vector> anchors, SimilarityMetric metric);

/// H_i = 1 - d_i with d the discriminator's domain probabilities.
Vector nnm_scores(const Discriminator& disc, const Vector& feature);

/// alpha_k ∝ max(H_k, floor)^(-gamma) in log space; gamma = 0 is exactly
/// uniform, gamma = +inf is one-hot at the lowest-index argmin.
MixWeights mix_weights(const Vector& H, double gamma, double score_floor = 1e-8);

enum class HeadNormalization { None, Sum, Softmax };

/// sum_k alpha_k * normalize(scores_k).
Vector mix_scores(std::span<const Vector> per_head_scores, const Vector& alpha, HeadNormalization norm);

struct EnsembleOutput {
  Vector scores;
  int label = 0;
};

/// Mixes raw logits, or softmax probabilities when normalize_heads is set.
EnsembleOutput ensemble_predict(std::span<const Vector> per_head_logits, const MixWeights& alpha,
                                bool normalize_heads);

struct Prediction {
  Vector alpha;
  Vector scores;
  int label = 0;
};

/// Read-only artifacts of a trained run that selection may need.
struct SelectionContext {
  const DomainStats* stats = nullptr;
  const Discriminator* disc = nullptr;
};

/// alpha for one sample from its feature row and per-head logits.
Vector sample_alpha(const MultiHeadModel& model, const SelectionContext& ctx, const SelectionStrategy& strategy,
                    const Vector& feature, std::span<const Vector> per_head_logits);

/// forward -> H -> alpha -> mix for every row of the batch.
std::vector<Prediction> select_and_predict(const MultiHeadModel& model, const SelectionContext& ctx,
                                           const Matrix& batch, const SelectionStrategy& strategy);

/// Per-head logits of row i of a forward record.
std::vector<Vector> row_logits(const ForwardRecord& rec, Index i);

}  // namespace drmlab
