#include "drmlab/ttselect.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace drmlab {

std::string to_string(SelectKind k) {
  switch (k) {
    case SelectKind::PEM: return "PEM";
    case SelectKind::CSM: return "CSM";
    case SelectKind::L2SM: return "L2SM";
    case SelectKind::NNM: return "NNM";
    case SelectKind::Uniform: return "Uniform";
  }
  return "?";
}

SelectKind parse_select_kind(const std::string& s) {
  for (auto k : {SelectKind::PEM, SelectKind::CSM, SelectKind::L2SM, SelectKind::NNM, SelectKind::Uniform}) {
    std::string name = to_string(k);
    if (s.size() == name.size() &&
        std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return k;
  }
  throw ConfigError("select.kind: unknown strategy '" + s + "' (PEM, CSM, L2SM, NNM, Uniform)");
}

void SelectionStrategy::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("select.gamma must be >= 0");
  if (!(score_floor > 0.0)) throw ConfigError("select.floor must be > 0");
}

Vector pem_scores(std::span<const Vector> per_head_probs) {
  Vector H(static_cast<Index>(per_head_probs.size()));
  for (std::size_t k = 0; k < per_head_probs.size(); ++k) H(static_cast<Index>(k)) = entropy(per_head_probs[k]);
  return H;
}

SimilarityScores sm_scores(const Vector& feature, std::span<const Vector> anchors, SimilarityMetric metric) {
  SimilarityScores out;
  out.H.resize(static_cast<Index>(anchors.size()));
  out.fell_back_to_l2.assign(anchors.size(), false);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Vector& mu = anchors[i];
    if (mu.size() != feature.size()) throw ArgumentError("sm_scores: feature dimension differs from anchor");
    const double l2 = (feature - mu).norm();
    if (metric == SimilarityMetric::L2) {
      out.H(static_cast<Index>(i)) = l2;
      continue;
    }
    const double denom = feature.norm() * mu.norm();
    if (denom == 0.0) {
      out.H(static_cast<Index>(i)) = l2;
      out.fell_back_to_l2[i] = true;
    } else {
      out.H(static_cast<Index>(i)) = std::clamp(1.0 - feature.dot(mu) / denom, 0.0, 2.0);
    }
  }
  return out;
}

Vector nnm_scores(const Discriminator& disc, const Vector& feature) {
  return (1.0 - disc.probs(feature.transpose()).array()).matrix();
}

namespace {

Vector uniform_alpha(Index k) { return Vector::Constant(k, 1.0 / static_cast<double>(k)); }

}  // namespace

MixWeights mix_weights(const Vector& H, double gamma, double score_floor) {
  const Index k = H.size();
  if (k == 0) throw ArgumentError("mix_weights: no heads");
  if ((H.array() < 0.0).any()) throw ArgumentError("mix_weights: negative score");
  const Vector clamped = H.cwiseMax(score_floor);
  if (gamma == 0.0) return {uniform_alpha(k)};
  if (std::isinf(gamma)) {
    Vector a = Vector::Zero(k);
    a(argmin(clamped)) = 1.0;
    return {a};
  }
  const Vector logw = -gamma * clamped.array().log().matrix();
  Vector w = (logw.array() - logw.maxCoeff()).exp().matrix();
  return {w / w.sum()};
}

Vector mix_scores(std::span<const Vector> per_head_scores, const Vector& alpha, HeadNormalization norm) {
  if (static_cast<Index>(per_head_scores.size()) != alpha.size())
    throw ArgumentError("mix_scores: alpha length differs from head count");
  Vector out = Vector::Zero(per_head_scores.front().size());
  for (std::size_t k = 0; k < per_head_scores.size(); ++k) {
    const Vector& s = per_head_scores[k];
    switch (norm) {
      case HeadNormalization::None: out += alpha(static_cast<Index>(k)) * s; break;
      case HeadNormalization::Sum: out += alpha(static_cast<Index>(k)) * (s / s.sum()); break;
      case HeadNormalization::Softmax: out += alpha(static_cast<Index>(k)) * softmax(s); break;
    }
  }
  return out;
}

EnsembleOutput ensemble_predict(std::span<const Vector> per_head_logits, const MixWeights& alpha,
                                bool normalize_heads) {
  EnsembleOutput out;
  out.scores = mix_scores(per_head_logits, alpha.alpha,
                          normalize_heads ? HeadNormalization::Softmax : HeadNormalization::None);
  out.label = static_cast<int>(argmax(out.scores));
  return out;
}

std::vector<Vector> row_logits(const ForwardRecord& rec, Index i) {
  std::vector<Vector> out;
  out.reserve(rec.logits.size());
  for (const auto& l : rec.logits) out.emplace_back(l.row(i).transpose());
  return out;
}

Vector sample_alpha(const MultiHeadModel& model, const SelectionContext& ctx, const SelectionStrategy& strategy,
                    const Vector& feature, std::span<const Vector> per_head_logits) {
  const Index total = static_cast<Index>(per_head_logits.size());
  const bool global = model.config.extra_global_head;
  switch (strategy.kind) {
    case SelectKind::Uniform: return uniform_alpha(total);
    case SelectKind::PEM: {
      std::vector<Vector> probs;
      for (const auto& l : per_head_logits) probs.push_back(softmax(l));
      return mix_weights(pem_scores(probs), strategy.gamma, strategy.score_floor).alpha;
    }
    case SelectKind::CSM:
    case SelectKind::L2SM: {
      if (ctx.stats == nullptr) throw ConfigError("select.kind=" + to_string(strategy.kind) + " needs domain statistics");
      std::vector<Vector> anchors = ctx.stats->means;
      if (global) anchors.push_back(ctx.stats->global_mean);
      if (static_cast<Index>(anchors.size()) != total)
        throw ConfigError("domain statistics do not match the model's heads");
      const auto metric = strategy.kind == SelectKind::CSM ? SimilarityMetric::Cosine : SimilarityMetric::L2;
      return mix_weights(sm_scores(feature, anchors, metric).H, strategy.gamma, strategy.score_floor).alpha;
    }
    case SelectKind::NNM: {
      if (ctx.disc == nullptr) throw ConfigError("select.kind=NNM needs a trained domain discriminator");
      if (ctx.disc->num_domains() != model.config.num_heads)
        throw ConfigError("discriminator classes do not match the model's source heads");
      const Vector a = mix_weights(nnm_scores(*ctx.disc, feature), strategy.gamma, strategy.score_floor).alpha;
      if (!global) return a;
      Vector full = Vector::Zero(total);
      full.head(a.size()) = a;
      return full;
    }
  }
  return uniform_alpha(total);
}

std::vector<Prediction> select_and_predict(const MultiHeadModel& model, const SelectionContext& ctx,
                                           const Matrix& batch, const SelectionStrategy& strategy) {
  strategy.validate();
  const ForwardRecord rec = forward(model, batch);
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(batch.rows()));
  for (Index i = 0; i < batch.rows(); ++i) {
    const auto logits = row_logits(rec, i);
    const Vector feature = rec.features().row(i).transpose();
    Prediction p;
    p.alpha = sample_alpha(model, ctx, strategy, feature, logits);
    const auto e = ensemble_predict(logits, {p.alpha}, strategy.normalize_heads);
    p.scores = e.scores;
    p.label = e.label;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace drmlab
