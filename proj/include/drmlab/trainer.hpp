#pragma once

#include "drmlab/core.hpp"
#include "drmlab/datagen.hpp"
#include "drmlab/net.hpp"

#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

namespace drmlab {

/// KL-DRO sample reweighting inside each head's batch.
struct Reweight {
  enum class Kind { None, FixedTau, Radius };
  Kind kind = Kind::None;
  double value = 0.0;  // tau for FixedTau, eta for Radius
};

struct TrainConfig {
  Index steps = 2000;
  Index batch_per_domain = 64;
  double lr = 1e-3;
  Reweight reweight;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLoss {
  double total = 0.0;
  std::vector<double> per_head;
};

struct TrainResult {
  MultiHeadModel model;
  std::vector<StepLoss> trace;
};

/// Multi-head training: each step draws batch_per_domain samples from every
/// domain; head i sees only domain i, the optional global head sees all, and
/// the step loss is the mean of the head losses.
TrainResult train_drm(MultiHeadModel model, std::span<const DomainDataset> domains, const TrainConfig& cfg);

/// Plain minibatch cross-entropy on pooled data (batch size batch_per_domain).
TrainResult train_erm(MultiHeadModel model, const DomainDataset& pooled, const TrainConfig& cfg);

/// w_i = exp(l_i/tau) / mean_j exp(l_j/tau); tau = +inf gives all ones.
Vector kldro_weights(const Vector& losses, double tau);

/// KL(q || uniform) of the exponentially tilted distribution q_i ∝ exp(l_i/tau).
double tilted_kl(const Vector& losses, double tau);

/// tau* with KL(q*(tau*) || uniform) = eta (bisection in log tau).
/// eta = 0 returns +inf. Throws ArgumentError when eta is not achievable.
double solve_tau(const Vector& losses, double eta);

inline constexpr double kInfiniteTau = std::numeric_limits<double>::infinity();

struct DomainStats {
  std::vector<Vector> means;   // one per source domain, E_{D_i}[g]
  std::vector<Index> counts;
  Vector global_mean;          // anchor for the optional global head
};

DomainStats compute_domain_stats(const MultiHeadModel& model, std::span<const DomainDataset> domains);

/// Linear softmax classifier on frozen encoder features predicting the
/// source-domain position.
struct Discriminator {
  Dense layer;
  Dense m, v;
  std::int64_t step = 0;

  int num_domains() const { return static_cast<int>(layer.bias.size()); }
  Matrix logits(const Matrix& features) const;
  /// Softmax domain probabilities of one feature row.
  Vector probs(const Eigen::Ref<const RowVector>& feature) const;
};

Discriminator train_discriminator(const MultiHeadModel& model, std::span<const DomainDataset> domains,
                                  const TrainConfig& cfg);

/// CSV: step,total_loss,head_0_loss,...
void write_loss_trace(std::ostream& os, const std::vector<StepLoss>& trace);

}  // namespace drmlab
