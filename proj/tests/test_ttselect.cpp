#include "doctest.h"
#include "drmlab/ttselect.hpp"

using namespace drmlab;

namespace {

struct Trained {
  MultiHeadModel model;
  DomainStats stats;
  std::vector<DomainDataset> sources;
};

const Trained& rb_model() {
  static const Trained t = [] {
    Trained out;
    const auto doms = gen_four_gaussians(2000, 21);
    out.sources = {doms[2], doms[3]};
    ModelConfig c;
    c.num_heads = 2;
    c.init_seed = 3;
    TrainConfig cfg;
    cfg.seed = 4;
    out.model = train_drm(model_init(c), out.sources, cfg).model;
    out.stats = compute_domain_stats(out.model, out.sources);
    return out;
  }();
  return t;
}

Discriminator fixed_discriminator(const Vector& probs, Index feature_dim) {
  Discriminator d;
  d.layer.weight = Matrix::Zero(feature_dim, probs.size());
  d.layer.bias = probs.array().log().matrix().transpose();
  return d;
}

void check_simplex(const Vector& a) {
  CHECK(a.minCoeff() >= 0.0);
  CHECK(std::abs(a.sum() - 1.0) < 1e-9);
}

}  // namespace

TEST_CASE("pem scores") {
  const std::vector<Vector> probs{Vector{{1.0, 0.0}}, Vector::Constant(3, 1.0 / 3.0), Vector{{0.9, 0.1}},
                                  Vector{{0.6, 0.4}}};
  const Vector H = pem_scores(probs);
  CHECK(H(0) == 0.0);
  CHECK(H(1) == doctest::Approx(std::log(3.0)));
  CHECK(H(2) == doctest::Approx(0.3251).epsilon(1e-4));
  CHECK(H(3) == doctest::Approx(0.6730).epsilon(1e-4));
  CHECK(argmin(Vector(H.tail(2))) == 0);
}

TEST_CASE("similarity scores") {
  const std::vector<Vector> anchors{Vector{{1.0, 2.0}}, Vector{{0.0, 0.0}}, Vector{{-2.0, 1.0}}};
  const auto l2 = sm_scores(Vector{{1.0, 2.0}}, anchors, SimilarityMetric::L2);
  CHECK(l2.H(0) == 0.0);
  CHECK(l2.H(1) == doctest::Approx(std::sqrt(5.0)));
  const auto cs = sm_scores(Vector{{1.0, 2.0}}, anchors, SimilarityMetric::Cosine);
  CHECK(cs.H(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cs.H(2) == doctest::Approx(1.0));
  CHECK(cs.fell_back_to_l2[1]);
  CHECK(cs.H(1) == doctest::Approx(std::sqrt(5.0)));
  CHECK_FALSE(cs.fell_back_to_l2[0]);

  const std::vector<Vector> origin{Vector{{0.0, 0.0}}};
  CHECK(sm_scores(Vector{{3.0, 4.0}}, origin, SimilarityMetric::L2).H(0) == 5.0);
  CHECK_THROWS_AS(sm_scores(Vector{{1.0, 2.0, 3.0}}, origin, SimilarityMetric::L2), ArgumentError);
}

TEST_CASE("nnm scores") {
  const Vector feature = Vector::Ones(4);
  const Vector H = nnm_scores(fixed_discriminator(Vector{{0.7, 0.2, 0.1}}, 4), feature);
  CHECK(H(0) == doctest::Approx(0.3));
  CHECK(H(1) == doctest::Approx(0.8));
  CHECK(H(2) == doctest::Approx(0.9));

  const Vector u = nnm_scores(fixed_discriminator(Vector::Constant(3, 1.0 / 3.0), 4), feature);
  CHECK(u.maxCoeff() - u.minCoeff() < 1e-15);
  const auto a = mix_weights(u, 4.0);
  CHECK((a.alpha.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);

  Rng rng = rng_create(2);
  for (int t = 0; t < 20; ++t) {
    Vector d(4);
    for (Index i = 0; i < 4; ++i) d(i) = 0.05 + rng.uniform();
    d /= d.sum();
    const auto disc = fixed_discriminator(d, 2);
    CHECK(argmin(nnm_scores(disc, Vector::Zero(2))) == argmax(disc.probs(RowVector::Zero(2))));
  }
}

TEST_CASE("mix weights cases") {
  const Vector H{{0.5, 0.2, 0.9}};
  const auto u = mix_weights(H, 0.0);
  CHECK((u.alpha.array() == 1.0 / 3.0).all());
  const auto one = mix_weights(H, kGammaInfinity);
  CHECK(one.alpha(0) == 0.0);
  CHECK(one.alpha(1) == 1.0);
  CHECK(one.alpha(2) == 0.0);
  const auto lin = mix_weights(Vector{{1.0, 2.0}}, 1.0);
  CHECK(lin.alpha(0) == doctest::Approx(2.0 / 3.0));
  CHECK(lin.alpha(1) == doctest::Approx(1.0 / 3.0));

  const auto tie = mix_weights(Vector{{0.3, 0.1, 0.1}}, kGammaInfinity);
  CHECK(tie.alpha(1) == 1.0);
  const auto floor = mix_weights(Vector{{0.0, 0.0, 0.5}}, kGammaInfinity);
  CHECK(floor.alpha(0) == 1.0);
  const auto zero_entropy = mix_weights(Vector{{0.0, 0.5}}, 2.0);
  CHECK(zero_entropy.alpha(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(zero_entropy.alpha(1)));
  CHECK_THROWS_AS(mix_weights(Vector{{-0.1, 0.2}}, 1.0), ArgumentError);
}

TEST_CASE("mix weights properties") {
  Rng rng = rng_create(5);
  for (int t = 0; t < 200; ++t) {
    const Index k = 2 + rng.below(6);
    Vector H(k);
    for (Index i = 0; i < k; ++i) H(i) = rng.uniform() * 3.0;
    for (const double g : {0.0, 0.3, 1.0, 7.0, 250.0, kGammaInfinity}) check_simplex(mix_weights(H, g).alpha);

    // Scale invariance.
    const double c = 0.1 + 5.0 * rng.uniform();
    for (const double g : {0.5, 2.0, 9.0})
      CHECK((mix_weights(H, g).alpha - mix_weights(Vector(c * H), g).alpha).cwiseAbs().maxCoeff() < 1e-12);

    // Monotone convergence to the argmin one-hot.
    const Vector target = mix_weights(H, kGammaInfinity).alpha;
    double prev = 2.0;
    for (const double g : {0.0, 1.0, 10.0, 100.0}) {
      const double dist = (mix_weights(H, g).alpha - target).cwiseAbs().maxCoeff();
      CHECK(dist <= prev + 1e-15);
      prev = dist;
    }
  }
}

TEST_CASE("ensemble predictions") {
  const std::vector<Vector> heads{Vector{{2.1, 0.4, 0.5}}, Vector{{0.3, 0.6, 0.1}}};
  const Vector ones = Vector::Ones(2);
  const Vector raw = mix_scores(heads, ones, HeadNormalization::None);
  CHECK((raw - Vector{{2.4, 1.0, 0.6}}).cwiseAbs().maxCoeff() < 1e-12);
  const Vector summed = mix_scores(heads, ones, HeadNormalization::Sum);
  CHECK(summed(0) == doctest::Approx(1.0));
  CHECK(summed(1) == doctest::Approx(0.733).epsilon(1e-3));
  CHECK(summed(2) == doctest::Approx(0.267).epsilon(1e-3));

  const auto pick = ensemble_predict(heads, {Vector{{0.0, 1.0}}}, false);
  CHECK((pick.scores.array() == heads[1].array()).all());
  CHECK(pick.label == 1);
  const auto soft = ensemble_predict(heads, {Vector{{1.0, 0.0}}}, true);
  CHECK((soft.scores - softmax(heads[0])).cwiseAbs().maxCoeff() < 1e-15);

  const std::vector<Vector> same{Vector{{0.2, 1.5}}, Vector{{0.2, 1.5}}, Vector{{0.2, 1.5}}};
  const auto mixed = ensemble_predict(same, {Vector{{0.2, 0.5, 0.3}}}, false);
  CHECK((mixed.scores - same[0]).cwiseAbs().maxCoeff() < 1e-15);

  const auto tie = ensemble_predict(std::vector<Vector>{Vector{{1.0, 1.0}}}, {Vector::Ones(1)}, false);
  CHECK(tie.label == 0);
}

TEST_CASE("uniform strategy ignores the score backend") {
  const auto& t = rb_model();
  Rng rng = rng_create(1);
  const Matrix batch = gaussian_sample(rng, quadrant_mean(Quadrant::o), 50);
  SelectionStrategy u;
  u.kind = SelectKind::Uniform;
  u.gamma = 3.0;
  SelectionStrategy pem0;
  pem0.gamma = 0.0;
  const SelectionContext ctx{&t.stats, nullptr};
  const auto a = select_and_predict(t.model, ctx, batch, u);
  const auto b = select_and_predict(t.model, ctx, batch, pem0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].alpha.array() == b[i].alpha.array()).all());
    CHECK(a[i].label == b[i].label);
    CHECK((a[i].scores.array() == b[i].scores.array()).all());
  }
  const auto again = select_and_predict(t.model, ctx, batch, u);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i].scores.array() == again[i].scores.array()).all());
}

TEST_CASE("pem picks head r far on the x1 < -3 side of D_o") {
  const auto& t = rb_model();
  // f_o = 1{x1 > -3}, so samples deep in x1 < -3 carry label 0.
  Matrix x(3, 2);
  x << -5.0, 3.0, -6.0, 3.5, -5.5, 2.5;
  SelectionStrategy pem;
  const auto out = select_and_predict(t.model, {&t.stats, nullptr}, x, pem);
  const auto rec = forward(t.model, x);
  for (Index i = 0; i < x.rows(); ++i) {
    const auto& p = out[static_cast<std::size_t>(i)];
    // Margin oracle: the head with the larger logit gap has the lower entropy.
    const double m0 = std::abs(rec.logits[0](i, 1) - rec.logits[0](i, 0));
    const double m1 = std::abs(rec.logits[1](i, 1) - rec.logits[1](i, 0));
    CHECK(p.alpha(m0 >= m1 ? 0 : 1) == 1.0);
    CHECK(p.label == 0);
    CHECK(p.alpha(0) == 1.0);
  }
}

TEST_CASE("missing artifacts are configuration errors") {
  const auto& t = rb_model();
  const Matrix x = Matrix::Zero(1, 2);
  SelectionStrategy s;
  s.kind = SelectKind::CSM;
  CHECK_THROWS_AS(select_and_predict(t.model, {}, x, s), ConfigError);
  s.kind = SelectKind::NNM;
  CHECK_THROWS_AS(select_and_predict(t.model, {&t.stats, nullptr}, x, s), ConfigError);
  s.gamma = -1.0;
  CHECK_THROWS_AS(select_and_predict(t.model, {&t.stats, nullptr}, x, s), ConfigError);
  CHECK_THROWS_AS(parse_select_kind("entropy"), ConfigError);
  CHECK(parse_select_kind("L2SM") == SelectKind::L2SM);
}

TEST_CASE("nnm with a uniform discriminator equals uniform mixing") {
  const auto& t = rb_model();
  const auto disc = fixed_discriminator(Vector::Constant(2, 0.5), t.model.config.feature_dim);
  Rng rng = rng_create(8);
  const Matrix batch = gaussian_sample(rng, quadrant_mean(Quadrant::g), 40);
  SelectionStrategy nnm;
  nnm.kind = SelectKind::NNM;
  nnm.gamma = 2.0;
  SelectionStrategy uni;
  uni.kind = SelectKind::Uniform;
  const SelectionContext ctx{&t.stats, &disc};
  const auto a = select_and_predict(t.model, ctx, batch, nnm);
  const auto b = select_and_predict(t.model, ctx, batch, uni);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].label == b[i].label);
}

TEST_CASE("global head: excluded from nnm, included in pem and sm") {
  const auto doms = gen_four_gaussians(300, 2);
  const std::vector<DomainDataset> src{doms[2], doms[3]};
  ModelConfig c;
  c.num_heads = 2;
  c.extra_global_head = true;
  TrainConfig cfg;
  cfg.steps = 50;
  const auto m = train_drm(model_init(c), src, cfg).model;
  const auto stats = compute_domain_stats(m, src);
  const auto disc = fixed_discriminator(Vector{{0.6, 0.4}}, c.feature_dim);
  const SelectionContext ctx{&stats, &disc};
  Rng rng = rng_create(1);
  const Matrix batch = gaussian_sample(rng, Vector::Zero(2), 20);
  SelectionStrategy s;
  s.gamma = 1.0;
  s.kind = SelectKind::NNM;
  for (const auto& p : select_and_predict(m, ctx, batch, s)) {
    REQUIRE(p.alpha.size() == 3);
    CHECK(p.alpha(2) == 0.0);
    check_simplex(p.alpha);
  }
  s.kind = SelectKind::PEM;
  for (const auto& p : select_and_predict(m, ctx, batch, s)) CHECK(p.alpha(2) > 0.0);

  s.kind = SelectKind::L2SM;
  s.gamma = kGammaInfinity;
  Matrix at_global(1, 2);
  at_global.row(0) = batch.row(0);
  const Vector f = encode(m, at_global).row(0).transpose();
  const std::vector<Vector> logits = row_logits(forward(m, at_global), 0);
  const Vector a = sample_alpha(m, ctx, s, stats.global_mean, logits);
  CHECK(a(2) == 1.0);
  CHECK(sample_alpha(m, ctx, s, f, logits).size() == 3);
}

TEST_CASE("pem domain diagonal after drm training") {
  const auto& t = rb_model();
  for (std::size_t i = 0; i < t.sources.size(); ++i) {
    const auto rec = forward(t.model, t.sources[i].inputs);
    Vector mean_h = Vector::Zero(2);
    for (Index r = 0; r < t.sources[i].size(); ++r)
      for (int k = 0; k < 2; ++k) mean_h(k) += entropy(softmax(Vector(rec.logits[static_cast<std::size_t>(k)].row(r).transpose())));
    CHECK(argmin(mean_h) == static_cast<Index>(i));
  }
}
