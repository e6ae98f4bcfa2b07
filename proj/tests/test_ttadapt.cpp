#include "doctest.h"
#include "drmlab/ttadapt.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

using namespace drmlab;

namespace {

struct Trained {
  MultiHeadModel model;
  DomainStats stats;
  DomainDataset target;
};

const Trained& rb_model() {
  static const Trained t = [] {
    Trained out;
    const auto doms = gen_four_gaussians(1000, 31);
    const std::vector<DomainDataset> src{doms[2], doms[3]};
    ModelConfig c;
    c.num_heads = 2;
    c.init_seed = 5;
    TrainConfig cfg;
    cfg.steps = 600;
    cfg.seed = 6;
    out.model = train_drm(model_init(c), src, cfg).model;
    out.stats = compute_domain_stats(out.model, src);
    out.target = gen_four_gaussians(300, 32)[0];
    return out;
  }();
  return t;
}

bool encoder_equal(const MultiHeadModel& a, const MultiHeadModel& b) {
  Parameters pa, pb;
  pa.encoder = a.params.encoder;
  pb.encoder = b.params.encoder;
  return pa == pb;
}

double param_distance(const MultiHeadModel& a, const MultiHeadModel& b) {
  std::vector<double> va, vb;
  a.params.for_each([&](const std::string&, Eigen::Map<const Vector> v) { va.insert(va.end(), v.data(), v.data() + v.size()); });
  b.params.for_each([&](const std::string&, Eigen::Map<const Vector> v) { vb.insert(vb.end(), v.data(), v.data() + v.size()); });
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
  return std::sqrt(s);
}

SelectionStrategy pem() { return SelectionStrategy{}; }

}  // namespace

TEST_CASE("stream loop: ground-truth predictor, partitions, order") {
  const auto& t = rb_model();
  StreamHooks hooks;
  hooks.predict = [](const Matrix&, std::span<const int> truth, std::vector<double>& ent) {
    ent.assign(truth.size(), 0.0);
    return std::vector<int>(truth.begin(), truth.end());
  };
  const auto r = stream_loop(t.target, 32, 3, hooks);
  CHECK(r.correct == t.target.size());
  CHECK(std::accumulate(r.batch_sizes.begin(), r.batch_sizes.end(), Index{0}) == t.target.size());
  CHECK(r.batch_sizes.back() == t.target.size() % 32);
  std::vector<Index> sorted = r.order;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < t.target.size(); ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);

  DomainDataset empty;
  empty.inputs.resize(0, 2);
  CHECK_THROWS_AS(stream_loop(empty, 8, 0, hooks), ArgumentError);
}

TEST_CASE("predictions precede updates") {
  const auto& t = rb_model();
  std::vector<std::string> calls;
  StreamHooks hooks;
  hooks.predict = [&](const Matrix& b, std::span<const int>, std::vector<double>& ent) {
    calls.push_back("p");
    ent.assign(static_cast<std::size_t>(b.rows()), 0.0);
    return std::vector<int>(static_cast<std::size_t>(b.rows()), 0);
  };
  hooks.update = [&](const Matrix&) { calls.push_back("u"); };
  stream_loop(t.target, 100, 1, hooks);
  CHECK(calls == std::vector<std::string>{"p", "u", "p", "u", "p", "u"});
}

TEST_CASE("mode none: deterministic, batch-size invariant, source untouched") {
  const auto& t = rb_model();
  AdaptConfig cfg;
  cfg.seed = 4;
  const SelectionContext ctx{&t.stats, nullptr};
  const auto a = stream_eval(t.model, ctx, pem(), t.target, cfg);
  const auto b = stream_eval(t.model, ctx, pem(), t.target, cfg);
  CHECK(a.predictions == b.predictions);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].acc_so_far == b.trace[i].acc_so_far);
    CHECK(a.trace[i].mean_entropy == b.trace[i].mean_entropy);
  }
  cfg.batch_size = 8;
  const auto c = stream_eval(t.model, ctx, pem(), t.target, cfg);
  CHECK(c.accuracy == a.accuracy);
  CHECK(c.state.seen == t.target.size());

  DomainDataset empty;
  empty.inputs.resize(0, 2);
  CHECK_THROWS_AS(stream_eval(t.model, ctx, pem(), empty, cfg), ArgumentError);
  cfg.mode = AdaptMode::DrmRetrain;
  cfg.adapt_lr = 0.0;
  CHECK_THROWS_AS(stream_eval(t.model, ctx, pem(), t.target, cfg), ConfigError);
}

TEST_CASE("adaptation never mutates the source model and keeps online causality") {
  const auto& t = rb_model();
  const std::string before = checkpoint_string(t.model);
  const SelectionContext ctx{&t.stats, nullptr};
  for (const auto mode : {AdaptMode::VanillaRetrain, AdaptMode::DrmRetrain, AdaptMode::EntropyMin}) {
    AdaptConfig cfg;
    cfg.mode = mode;
    cfg.scope = AdaptScope::Full;
    cfg.adapt_lr = 1e-2;
    cfg.batch_size = 50;
    cfg.seed = 2;
    const auto r = stream_eval(t.model, ctx, pem(), t.target, cfg);
    CHECK(checkpoint_string(t.model) == before);
    CHECK(param_distance(r.state.model, t.model) > 0.0);

    // Replay: each batch is predicted by the state before its own update.
    MultiHeadModel replay = t.model;
    replay.reset_optimizer();
    AdaptState st;
    st.model = replay;
    for (Index b = 0; b * 50 < t.target.size(); ++b) {
      const Index n = std::min<Index>(50, t.target.size() - b * 50);
      Matrix batch(n, 2);
      for (Index i = 0; i < n; ++i) batch.row(i) = t.target.inputs.row(r.order[static_cast<std::size_t>(b * 50 + i)]);
      const auto rec = forward(st.model, batch);
      const auto pred = predict_batch(st.model, ctx, rec, pem());
      for (Index i = 0; i < n; ++i) REQUIRE(pred.labels[static_cast<std::size_t>(i)] == r.predictions[static_cast<std::size_t>(b * 50 + i)]);
      if (mode == AdaptMode::EntropyMin)
        entropy_min_step(st, batch, pred.alpha, cfg.scope, cfg.adapt_lr);
      else
        retrain_step(st, batch, make_pseudo_labels(rec.logits, pred.alpha, mode), cfg.scope, cfg.adapt_lr);
    }
    CHECK(st.model.params == r.state.model.params);
  }
}

TEST_CASE("pseudo labels") {
  const std::vector<Matrix> logits{Matrix{{2.0, 0.0}, {0.0, 1.0}}, Matrix{{0.0, 0.5}, {0.0, 3.0}}};
  const std::vector<Vector> onehot(2, Vector{{0.0, 1.0}});
  const auto drm = make_pseudo_labels(logits, onehot, AdaptMode::DrmRetrain);
  CHECK(drm[0] == std::vector<int>{1, 1});
  CHECK(drm[1] == std::vector<int>{1, 1});
  const auto van = make_pseudo_labels(logits, onehot, AdaptMode::VanillaRetrain);
  CHECK(van[0] == std::vector<int>{0, 1});
  CHECK(van[1] == std::vector<int>{1, 1});

  // Row 1: both heads agree, so both modes coincide.
  CHECK(van[0][1] == drm[0][1]);
  CHECK(van[1][1] == drm[1][1]);

  // Disagreement with alpha [0.9, 0.1]: mixed score decides.
  const std::vector<Vector> tilt(2, Vector{{0.9, 0.1}});
  const auto mixed = make_pseudo_labels(logits, tilt, AdaptMode::DrmRetrain);
  for (Index i = 0; i < 2; ++i) {
    const Vector s = 0.9 * logits[0].row(i).transpose() + 0.1 * logits[1].row(i).transpose();
    CHECK(mixed[0][static_cast<std::size_t>(i)] == argmax(s));
  }
  CHECK(mixed[0][0] == 0);
}

TEST_CASE("retrain step scopes, zero lr and failures") {
  const auto& t = rb_model();
  Matrix batch = t.target.inputs.topRows(32);
  const auto rec = forward(t.model, batch);
  const std::vector<Vector> alpha(32, Vector{{0.5, 0.5}});
  const auto labels = make_pseudo_labels(rec.logits, alpha, AdaptMode::DrmRetrain);

  AdaptState clf;
  clf.model = t.model;
  retrain_step(clf, batch, labels, AdaptScope::Clf, 1e-2);
  CHECK(encoder_equal(clf.model, t.model));
  CHECK_FALSE(clf.model.params == t.model.params);

  AdaptState full;
  full.model = t.model;
  retrain_step(full, batch, labels, AdaptScope::Full, 1e-2);
  CHECK_FALSE(encoder_equal(full.model, t.model));

  AdaptState zero;
  zero.model = t.model;
  retrain_step(zero, batch, labels, AdaptScope::Full, 0.0);
  CHECK(zero.model.params == t.model.params);

  AdaptState bad;
  bad.model = t.model;
  bad.model.params.heads[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  const auto snapshot = bad.model.params;
  batch(0, 0) = 1e300;
  CHECK_THROWS_AS(retrain_step(bad, batch, labels, AdaptScope::Full, 1e-2), NumericError);
  CHECK(bad.failed_at.has_value());
  CHECK(bad.model.params == snapshot);
}

TEST_CASE("entropy minimisation lowers entropy on the same batch") {
  const auto& t = rb_model();
  const SelectionContext ctx{&t.stats, nullptr};
  SelectionStrategy uni;
  uni.kind = SelectKind::Uniform;
  // Points near the boundaries carry real uncertainty.
  Rng rng = rng_create(3);
  const Matrix batch = gaussian_sample(rng, Vector{{-3.0, 0.0}}, 64);
  const auto rec = forward(t.model, batch);
  const auto pred = predict_batch(t.model, ctx, rec, uni);
  const double before = mixed_entropy(rec, pred.alpha);

  AdaptState st;
  st.model = t.model;
  entropy_min_step(st, batch, pred.alpha, AdaptScope::Full, 1e-4);
  CHECK(mixed_entropy(forward(st.model, batch), pred.alpha) < before);

  AdaptState clf;
  clf.model = t.model;
  entropy_min_step(clf, batch, pred.alpha, AdaptScope::Clf, 1e-4);
  CHECK(encoder_equal(clf.model, t.model));
}

TEST_CASE("entropy minimisation barely moves confident predictions") {
  ModelConfig c;
  c.input_dim = 2;
  c.hidden_dims = {};
  c.feature_dim = 2;
  c.num_heads = 1;
  auto m = model_init(c);
  m.params.encoder[0].weight = Matrix::Identity(2, 2);
  m.params.heads[0].weight = Matrix{{40.0, -40.0}, {0.0, 0.0}};
  const Matrix batch = Matrix::Constant(8, 2, 1.0);
  const auto rec = forward(m, batch);
  const std::vector<Vector> alpha(8, Vector::Ones(1));
  REQUIRE(mixed_entropy(rec, alpha) < 1e-6);
  AdaptState st;
  st.model = m;
  const double lr = 1e-3;
  entropy_min_step(st, batch, alpha, AdaptScope::Full, lr);
  CHECK(param_distance(st.model, m) < 1e-6 * lr);
  CHECK(mixed_entropy(forward(st.model, batch), alpha) <= mixed_entropy(rec, alpha) + 1e-12);
}

TEST_CASE("config parsing and trace csv") {
  CHECK(parse_adapt_mode("drm_retrain") == AdaptMode::DrmRetrain);
  CHECK(parse_adapt_scope("full") == AdaptScope::Full);
  CHECK_THROWS_AS(parse_adapt_mode("tent"), ConfigError);
  CHECK(to_string(AdaptMode::EntropyMin) == "entropy_min");

  std::vector<TraceRow> rows(2);
  rows[1].batch_index = 1;
  std::ostringstream os;
  write_stream_trace(os, rows);
  CHECK(os.str().rfind("batch_index,n,acc_so_far,mean_entropy,mode,scope\n", 0) == 0);
}
