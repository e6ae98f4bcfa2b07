#include "drmlab/trainer.hpp"

#include <cmath>
#include <iomanip>

namespace drmlab {

void TrainConfig::validate() const {
  if (steps < 1) throw ArgumentError("train: steps must be >= 1");
  if (batch_per_domain < 1) throw ArgumentError("train: batch_per_domain must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("train: lr must be > 0");
  if (reweight.kind == Reweight::Kind::Radius && reweight.value < 0.0)
    throw ArgumentError("train: KL radius must be >= 0");
  if (reweight.kind == Reweight::Kind::FixedTau && !(reweight.value > 0.0))
    throw ArgumentError("train: tau must be > 0");
}

Vector kldro_weights(const Vector& losses, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("kldro_weights: tau must be > 0");
  const Index n = losses.size();
  if (std::isinf(tau) || n == 0) return Vector::Ones(n);
  const Vector scaled = losses / tau;
  const double log_mean = logsumexp(scaled) - std::log(static_cast<double>(n));
  return (scaled.array() - log_mean).exp().matrix();
}

double tilted_kl(const Vector& losses, double tau) {
  const Index n = losses.size();
  if (std::isinf(tau)) return 0.0;
  const Vector scaled = losses / tau;
  const double lse = logsumexp(scaled);
  double kl = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double logq = scaled(i) - lse;
    kl += std::exp(logq) * (logq + std::log(static_cast<double>(n)));
  }
  return std::max(kl, 0.0);
}

double solve_tau(const Vector& losses, double eta) {
  if (eta < 0.0) throw ArgumentError("solve_tau: eta must be >= 0");
  if (eta == 0.0) return kInfiniteTau;
  const Index n = losses.size();
  if (n == 0) throw ArgumentError("solve_tau: empty loss vector");
  // tau -> 0 concentrates q on the argmax set: KL -> log(n / #max).
  const double top = losses.maxCoeff();
  const auto n_top = (losses.array() == top).count();
  const double kl_sup = std::log(static_cast<double>(n) / static_cast<double>(n_top));
  if (eta >= kl_sup)
    throw ArgumentError("solve_tau: infeasible radius " + std::to_string(eta) + " (max achievable " +
                        std::to_string(kl_sup) + ")");
  double lo = 1.0, hi = 1.0;  // KL(lo) > eta > KL(hi)
  while (tilted_kl(losses, lo) <= eta) lo *= 0.5;
  while (tilted_kl(losses, hi) >= eta) hi *= 2.0;
  for (int it = 0; it < 400; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double kl = tilted_kl(losses, mid);
    if (kl > eta) lo = mid; else hi = mid;
    if (std::abs(kl - eta) < 1e-13 || hi / lo - 1.0 < 1e-15) break;
  }
  return std::sqrt(lo * hi);
}

namespace {

std::vector<Index> draw_indices(Rng& rng, Index n, Index count) {
  std::vector<Index> out(static_cast<std::size_t>(count));
  for (auto& i : out) i = static_cast<Index>(rng.below(static_cast<std::uint32_t>(n)));
  return out;
}

std::vector<double> sample_weights(const Matrix& logits, std::span<const int> labels, const Reweight& rw) {
  const Vector losses = per_sample_cross_entropy(logits, labels);
  const double tau = rw.kind == Reweight::Kind::FixedTau ? rw.value : solve_tau(losses, rw.value);
  const Vector w = kldro_weights(losses, tau);
  return {w.data(), w.data() + w.size()};
}

LossAndGrad head_loss(const Matrix& logits, std::span<const int> labels, const Reweight& rw) {
  if (rw.kind == Reweight::Kind::None) return cross_entropy(logits, labels);
  const auto w = sample_weights(logits, labels, rw);
  return cross_entropy(logits, labels, std::span<const double>(w));
}

}  // namespace

TrainResult train_drm(MultiHeadModel model, std::span<const DomainDataset> domains, const TrainConfig& cfg) {
  cfg.validate();
  validate_consistent(domains);
  const auto k = static_cast<int>(domains.size());
  if (k != model.config.num_heads)
    throw ArgumentError("train_drm: " + std::to_string(k) + " domains for " +
                        std::to_string(model.config.num_heads) + " heads");
  if (domains.front().dim() != model.config.input_dim || domains.front().num_classes != model.config.num_classes)
    throw ArgumentError("train_drm: dataset shape differs from model config");
  const bool global = model.config.extra_global_head;
  Rng root = rng_create(cfg.seed);
  std::vector<Rng> domain_rng;
  for (int i = 0; i < k; ++i) domain_rng.push_back(root.split());

  const Index b = cfg.batch_per_domain;
  const AdamOptions opt{.lr = cfg.lr};
  TrainResult res;
  res.trace.reserve(static_cast<std::size_t>(cfg.steps));
  Matrix batch(b * k, model.config.input_dim);
  std::vector<int> labels(static_cast<std::size_t>(b * k));
  for (Index step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < k; ++i) {
      const auto& d = domains[static_cast<std::size_t>(i)];
      const auto idx = draw_indices(domain_rng[static_cast<std::size_t>(i)], d.size(), b);
      for (Index r = 0; r < b; ++r) {
        batch.row(i * b + r) = d.inputs.row(idx[static_cast<std::size_t>(r)]);
        labels[static_cast<std::size_t>(i * b + r)] = d.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
      }
    }
    const ForwardRecord rec = forward(model, batch);
    const int active = k + (global ? 1 : 0);
    const double scale = 1.0 / active;
    std::vector<Matrix> dlogits;
    StepLoss sl;
    for (int h = 0; h < active; ++h) {
      Matrix d = Matrix::Zero(batch.rows(), model.config.num_classes);
      LossAndGrad lg;
      if (h < k) {
        const std::span<const int> lab(labels.data() + h * b, static_cast<std::size_t>(b));
        lg = head_loss(rec.logits[static_cast<std::size_t>(h)].middleRows(h * b, b), lab, cfg.reweight);
        d.middleRows(h * b, b) = scale * lg.dlogits;
      } else {
        lg = head_loss(rec.logits[static_cast<std::size_t>(h)], labels, cfg.reweight);
        d = scale * lg.dlogits;
      }
      sl.per_head.push_back(lg.loss);
      sl.total += lg.loss;
      dlogits.push_back(std::move(d));
    }
    sl.total /= active;
    if (!std::isfinite(sl.total)) throw NumericError("train_drm: non-finite loss at step " + std::to_string(step));
    adam_step(model, backward(model, rec, dlogits), opt);
    res.trace.push_back(std::move(sl));
  }
  res.model = std::move(model);
  return res;
}

TrainResult train_erm(MultiHeadModel model, const DomainDataset& pooled, const TrainConfig& cfg) {
  cfg.validate();
  validate(pooled);
  if (model.head_count() != 1) throw ArgumentError("train_erm: model must have exactly one head");
  if (pooled.size() == 0) throw ArgumentError("train_erm: empty dataset");
  Rng rng = rng_create(cfg.seed);
  const AdamOptions opt{.lr = cfg.lr};
  TrainResult res;
  const Index b = cfg.batch_per_domain;
  Matrix batch(b, model.config.input_dim);
  std::vector<int> labels(static_cast<std::size_t>(b));
  for (Index step = 0; step < cfg.steps; ++step) {
    const auto idx = draw_indices(rng, pooled.size(), b);
    for (Index r = 0; r < b; ++r) {
      batch.row(r) = pooled.inputs.row(idx[static_cast<std::size_t>(r)]);
      labels[static_cast<std::size_t>(r)] = pooled.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
    }
    const ForwardRecord rec = forward(model, batch);
    const LossAndGrad lg = head_loss(rec.logits[0], labels, cfg.reweight);
    if (!std::isfinite(lg.loss)) throw NumericError("train_erm: non-finite loss at step " + std::to_string(step));
    const std::vector<Matrix> d{lg.dlogits};
    adam_step(model, backward(model, rec, d), opt);
    res.trace.push_back({lg.loss, {lg.loss}});
  }
  res.model = std::move(model);
  return res;
}

DomainStats compute_domain_stats(const MultiHeadModel& model, std::span<const DomainDataset> domains) {
  DomainStats s;
  Index total = 0;
  s.global_mean = Vector::Zero(model.config.feature_dim);
  for (const auto& d : domains) {
    if (d.size() == 0) throw ArgumentError("compute_domain_stats: empty domain '" + d.name + "'");
    const Matrix f = encode(model, d.inputs);
    const Vector sum = f.colwise().sum().transpose();
    s.means.push_back(sum / static_cast<double>(d.size()));
    s.counts.push_back(d.size());
    s.global_mean += sum;
    total += d.size();
  }
  if (total > 0) s.global_mean /= static_cast<double>(total);
  return s;
}

Matrix Discriminator::logits(const Matrix& features) const {
  Matrix z = features * layer.weight;
  z.rowwise() += layer.bias;
  return z;
}

Vector Discriminator::probs(const Eigen::Ref<const RowVector>& feature) const {
  const RowVector z = feature * layer.weight + layer.bias;
  return softmax(z).transpose();
}

Discriminator train_discriminator(const MultiHeadModel& model, std::span<const DomainDataset> domains,
                                  const TrainConfig& cfg) {
  cfg.validate();
  if (domains.size() < 2) throw ArgumentError("train_discriminator: need at least 2 domains");
  const auto k = static_cast<Index>(domains.size());
  const Index fd = model.config.feature_dim;
  std::vector<Matrix> features;
  for (const auto& d : domains) {
    if (d.size() == 0) throw ArgumentError("train_discriminator: empty domain");
    features.push_back(encode(model, d.inputs));
  }
  Rng rng = rng_create(cfg.seed);
  Discriminator disc;
  const double bound = std::sqrt(6.0 / static_cast<double>(fd + k));
  disc.layer.weight.resize(fd, k);
  for (Index i = 0; i < disc.layer.weight.size(); ++i) disc.layer.weight.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
  disc.layer.bias = RowVector::Zero(k);
  disc.m = {Matrix::Zero(fd, k), RowVector::Zero(k)};
  disc.v = disc.m;
  std::vector<Rng> domain_rng;
  for (Index i = 0; i < k; ++i) domain_rng.push_back(rng.split());
  const Index b = cfg.batch_per_domain;
  Matrix batch(b * k, fd);
  std::vector<int> labels(static_cast<std::size_t>(b * k));
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (Index step = 0; step < cfg.steps; ++step) {
    for (Index i = 0; i < k; ++i) {
      const auto idx = draw_indices(domain_rng[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(i)].rows(), b);
      for (Index r = 0; r < b; ++r) {
        batch.row(i * b + r) = features[static_cast<std::size_t>(i)].row(idx[static_cast<std::size_t>(r)]);
        labels[static_cast<std::size_t>(i * b + r)] = static_cast<int>(i);
      }
    }
    const LossAndGrad lg = cross_entropy(disc.logits(batch), labels);
    const Matrix gw = batch.transpose() * lg.dlogits;
    const RowVector gb = lg.dlogits.colwise().sum();
    disc.step += 1;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(disc.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(disc.step));
    disc.m.weight = b1 * disc.m.weight + (1 - b1) * gw;
    disc.v.weight = b2 * disc.v.weight + (1 - b2) * gw.cwiseAbs2();
    disc.m.bias = b1 * disc.m.bias + (1 - b1) * gb;
    disc.v.bias = b2 * disc.v.bias + (1 - b2) * gb.cwiseAbs2();
    disc.layer.weight.array() -= cfg.lr * (disc.m.weight.array() / bc1) / ((disc.v.weight.array() / bc2).sqrt() + eps);
    disc.layer.bias.array() -= cfg.lr * (disc.m.bias.array() / bc1) / ((disc.v.bias.array() / bc2).sqrt() + eps);
  }
  return disc;
}

void write_loss_trace(std::ostream& os, const std::vector<StepLoss>& trace) {
  os << "step,total_loss";
  const std::size_t heads = trace.empty() ? 0 : trace.front().per_head.size();
  for (std::size_t h = 0; h < heads; ++h) os << ",head_" << h << "_loss";
  os << '\n';
  os << std::setprecision(17);
  for (std::size_t s = 0; s < trace.size(); ++s) {
    os << s << ',' << trace[s].total;
    for (double v : trace[s].per_head) os << ',' << v;
    os << '\n';
  }
}

}  // namespace drmlab
