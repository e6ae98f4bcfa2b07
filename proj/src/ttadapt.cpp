#include "drmlab/ttadapt.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

namespace drmlab {

std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::None: return "none";
    case AdaptMode::VanillaRetrain: return "vanilla_retrain";
    case AdaptMode::DrmRetrain: return "drm_retrain";
    case AdaptMode::EntropyMin: return "entropy_min";
  }
  return "?";
}

std::string to_string(AdaptScope s) { return s == AdaptScope::Clf ? "clf" : "full"; }

AdaptMode parse_adapt_mode(const std::string& s) {
  for (auto m : {AdaptMode::None, AdaptMode::VanillaRetrain, AdaptMode::DrmRetrain, AdaptMode::EntropyMin})
    if (s == to_string(m)) return m;
  if (s == "vanilla") return AdaptMode::VanillaRetrain;
  if (s == "drm") return AdaptMode::DrmRetrain;
  throw ConfigError("adapt.mode: unknown mode '" + s + "' (none, vanilla_retrain, drm_retrain, entropy_min)");
}

AdaptScope parse_adapt_scope(const std::string& s) {
  if (s == "clf") return AdaptScope::Clf;
  if (s == "full") return AdaptScope::Full;
  throw ConfigError("adapt.scope: unknown scope '" + s + "' (clf, full)");
}

void AdaptConfig::validate() const {
  if (batch_size < 1) throw ConfigError("adapt.batch_size must be >= 1");
  if (mode != AdaptMode::None && !(adapt_lr > 0.0)) throw ConfigError("adapt.lr must be > 0 when adapting");
  if (adapt_lr < 0.0) throw ConfigError("adapt.lr must be >= 0");
  if (steps_per_batch < 1) throw ConfigError("adapt.steps_per_batch must be >= 1");
}

namespace {

Vector mixed_probs(std::span<const Vector> logits, const Vector& alpha) {
  return mix_scores(logits, alpha, HeadNormalization::Softmax);
}

}  // namespace

BatchPrediction predict_batch(const MultiHeadModel& model, const SelectionContext& ctx,
                              const ForwardRecord& rec, const SelectionStrategy& strategy) {
  strategy.validate();
  BatchPrediction out;
  const Index n = rec.features().rows();
  for (Index i = 0; i < n; ++i) {
    const auto logits = row_logits(rec, i);
    const Vector feature = rec.features().row(i).transpose();
    Vector alpha = sample_alpha(model, ctx, strategy, feature, logits);
    out.labels.push_back(ensemble_predict(logits, {alpha}, strategy.normalize_heads).label);
    out.entropy.push_back(entropy(mixed_probs(logits, alpha)));
    out.alpha.push_back(std::move(alpha));
  }
  return out;
}

PseudoLabels make_pseudo_labels(std::span<const Matrix> per_head_logits, std::span<const Vector> alpha,
                                AdaptMode mode, bool normalize_heads) {
  const auto heads = per_head_logits.size();
  const Index n = heads == 0 ? 0 : per_head_logits.front().rows();
  PseudoLabels out(heads, std::vector<int>(static_cast<std::size_t>(n)));
  if (mode == AdaptMode::DrmRetrain && static_cast<Index>(alpha.size()) != n)
    throw ArgumentError("make_pseudo_labels: one alpha per row is required");
  for (Index i = 0; i < n; ++i) {
    if (mode == AdaptMode::DrmRetrain) {
      std::vector<Vector> logits;
      for (const auto& m : per_head_logits) logits.emplace_back(m.row(i).transpose());
      const int y = ensemble_predict(logits, {alpha[static_cast<std::size_t>(i)]}, normalize_heads).label;
      for (auto& h : out) h[static_cast<std::size_t>(i)] = y;
    } else {
      for (std::size_t k = 0; k < heads; ++k)
        out[k][static_cast<std::size_t>(i)] = static_cast<int>(argmax(per_head_logits[k].row(i)));
    }
  }
  return out;
}

void retrain_step(AdaptState& state, const Matrix& batch, const PseudoLabels& labels, AdaptScope scope,
                  double adapt_lr) {
  const ForwardRecord rec = forward(state.model, batch);
  if (labels.size() != rec.logits.size()) throw ArgumentError("retrain_step: one label set per head is required");
  const double scale = 1.0 / static_cast<double>(rec.logits.size());
  double loss = 0.0;
  std::vector<Matrix> d;
  for (std::size_t k = 0; k < rec.logits.size(); ++k) {
    auto lg = cross_entropy(rec.logits[k], labels[k]);
    loss += scale * lg.loss;
    d.push_back(scale * lg.dlogits);
  }
  state.step += 1;
  if (!std::isfinite(loss)) {
    state.failed_at = state.step;
    throw NumericError("retrain_step: non-finite loss at step " + std::to_string(state.step));
  }
  if (adapt_lr == 0.0) return;
  adam_step(state.model, backward(state.model, rec, d),
            {.lr = adapt_lr, .update_encoder = scope == AdaptScope::Full});
}

double mixed_entropy(const ForwardRecord& rec, std::span<const Vector> alpha) {
  const Index n = rec.features().rows();
  double h = 0.0;
  for (Index i = 0; i < n; ++i) h += entropy(mixed_probs(row_logits(rec, i), alpha[static_cast<std::size_t>(i)]));
  return n > 0 ? h / static_cast<double>(n) : 0.0;
}

void entropy_min_step(AdaptState& state, const Matrix& batch, std::span<const Vector> alpha, AdaptScope scope,
                      double adapt_lr) {
  const ForwardRecord rec = forward(state.model, batch);
  const Index n = batch.rows();
  if (static_cast<Index>(alpha.size()) != n) throw ArgumentError("entropy_min_step: one alpha per row is required");
  const auto heads = rec.logits.size();
  const Index c = rec.logits.front().cols();
  std::vector<Matrix> d(heads, Matrix::Zero(n, c));
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Vector& a = alpha[static_cast<std::size_t>(i)];
    std::vector<Vector> s;
    Vector p = Vector::Zero(c);
    for (std::size_t k = 0; k < heads; ++k) {
      s.push_back(softmax(Vector(rec.logits[k].row(i).transpose())));
      p += a(static_cast<Index>(k)) * s.back();
    }
    loss += entropy(p);
    const Vector logp = p.cwiseMax(1e-300).array().log().matrix();
    // dH/dz_kj = a_k s_kj (sum_c s_kc log p_c - log p_j)
    for (std::size_t k = 0; k < heads; ++k) {
      const double inner = s[k].dot(logp);
      d[k].row(i) = (a(static_cast<Index>(k)) / static_cast<double>(n)) *
                    (s[k].array() * (inner - logp.array())).matrix().transpose();
    }
  }
  loss /= static_cast<double>(n);
  state.step += 1;
  if (!std::isfinite(loss)) {
    state.failed_at = state.step;
    throw NumericError("entropy_min_step: non-finite loss at step " + std::to_string(state.step));
  }
  if (adapt_lr == 0.0) return;
  adam_step(state.model, backward(state.model, rec, d),
            {.lr = adapt_lr, .update_encoder = scope == AdaptScope::Full});
}

StreamLoopResult stream_loop(const DomainDataset& target, Index batch_size, std::uint64_t seed,
                             const StreamHooks& hooks) {
  if (target.size() == 0) throw ArgumentError("stream_eval: empty target");
  if (batch_size < 1) throw ArgumentError("stream_eval: batch_size must be >= 1");
  Rng rng = rng_create(seed);
  StreamLoopResult res;
  res.order = permutation(rng, target.size());
  for (Index start = 0; start < target.size(); start += batch_size) {
    const Index n = std::min(batch_size, target.size() - start);
    const std::span<const Index> rows(res.order.data() + start, static_cast<std::size_t>(n));
    const DomainDataset b = subset(target, rows);
    std::vector<double> ent;
    const auto preds = hooks.predict(b.inputs, b.labels, ent);
    for (Index i = 0; i < n; ++i) {
      res.predictions.push_back(preds[static_cast<std::size_t>(i)]);
      if (preds[static_cast<std::size_t>(i)] == b.labels[static_cast<std::size_t>(i)]) ++res.correct;
    }
    double mean_ent = 0.0;
    for (double e : ent) mean_ent += e;
    res.batch_entropy.push_back(ent.empty() ? 0.0 : mean_ent / static_cast<double>(ent.size()));
    res.batch_sizes.push_back(n);
    if (hooks.update) hooks.update(b.inputs);
  }
  return res;
}

StreamResult stream_eval(const MultiHeadModel& model, const SelectionContext& ctx,
                         const SelectionStrategy& strategy, const DomainDataset& target, const AdaptConfig& cfg) {
  cfg.validate();
  strategy.validate();
  StreamResult res;
  res.state.model = model;
  res.state.model.reset_optimizer();
  AdaptState& st = res.state;
  // Predictions of the current batch, kept for the update that follows.
  std::optional<ForwardRecord> last_rec;
  BatchPrediction last_pred;

  StreamHooks hooks;
  hooks.predict = [&](const Matrix& batch, std::span<const int>, std::vector<double>& ent) {
    last_rec = forward(st.model, batch);
    last_pred = predict_batch(st.model, ctx, *last_rec, strategy);
    ent = last_pred.entropy;
    return last_pred.labels;
  };
  if (cfg.mode != AdaptMode::None) {
    hooks.update = [&](const Matrix& batch) {
      if (st.failed_at) return;
      try {
        for (Index s = 0; s < cfg.steps_per_batch; ++s) {
          if (s > 0) {
            last_rec = forward(st.model, batch);
            last_pred = predict_batch(st.model, ctx, *last_rec, strategy);
          }
          if (cfg.mode == AdaptMode::EntropyMin) {
            entropy_min_step(st, batch, last_pred.alpha, cfg.scope, cfg.adapt_lr);
          } else {
            const auto labels = make_pseudo_labels(last_rec->logits, last_pred.alpha, cfg.mode, strategy.normalize_heads);
            retrain_step(st, batch, labels, cfg.scope, cfg.adapt_lr);
          }
        }
      } catch (const NumericError&) {
        // failed_at is already recorded; the model keeps its last finite state.
      }
    };
  }
  const StreamLoopResult loop = stream_loop(target, cfg.batch_size, cfg.seed, hooks);
  Index seen = 0, correct = 0;
  for (std::size_t b = 0; b < loop.batch_sizes.size(); ++b) {
    for (Index i = 0; i < loop.batch_sizes[b]; ++i, ++seen) {
      const auto row = static_cast<std::size_t>(loop.order[static_cast<std::size_t>(seen)]);
      if (loop.predictions[static_cast<std::size_t>(seen)] == target.labels[row]) ++correct;
    }
    TraceRow tr;
    tr.batch_index = static_cast<Index>(b);
    tr.n = loop.batch_sizes[b];
    tr.acc_so_far = static_cast<double>(correct) / static_cast<double>(seen);
    tr.mean_entropy = loop.batch_entropy[b];
    tr.mode = cfg.mode;
    tr.scope = cfg.scope;
    res.trace.push_back(tr);
    st.entropy_trace.push_back(tr.mean_entropy);
  }
  st.seen = seen;
  st.correct = correct;
  res.predictions = loop.predictions;
  res.order = loop.order;
  res.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  return res;
}

void write_stream_trace(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "batch_index,n,acc_so_far,mean_entropy,mode,scope\n";
  os << std::setprecision(17);
  for (const auto& r : trace)
    os << r.batch_index << ',' << r.n << ',' << r.acc_so_far << ',' << r.mean_entropy << ',' << to_string(r.mode)
       << ',' << to_string(r.scope) << '\n';
}

}  // namespace drmlab
