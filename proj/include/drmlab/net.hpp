#pragma once

#include "drmlab/core.hpp"
#include "drmlab/numkit.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

struct ModelConfig {
  Index input_dim = 2;
  std::vector<Index> hidden_dims{64, 64};
  Index feature_dim = 64;
  int num_classes = 2;
  int num_heads = 1;
  bool extra_global_head = false;
  std::uint64_t init_seed = 0;

  /// Heads actually allocated: num_heads, plus one when the global head is on.
  int total_heads() const { return num_heads + (extra_global_head ? 1 : 0); }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Affine map x W + b with W stored fan_in x fan_out.
struct Dense {
  Matrix weight;
  RowVector bias;
};

/// Encoder layers followed by the linear heads. Also the gradient and Adam
/// moment container, so all of them share one traversal order.
struct Parameters {
  std::vector<Dense> encoder;
  std::vector<Dense> heads;

  Parameters zeros_like() const;
  Index count() const;

  /// Calls f(name, flat view) for every array in a fixed order: encoder
  /// layers (weight, bias), then heads (weight, bias).
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      f("encoder." + std::to_string(l) + ".weight", flat(encoder[l].weight));
      f("encoder." + std::to_string(l) + ".bias", flat(encoder[l].bias));
    }
    for (std::size_t k = 0; k < heads.size(); ++k) {
      f("head." + std::to_string(k) + ".weight", flat(heads[k].weight));
      f("head." + std::to_string(k) + ".bias", flat(heads[k].bias));
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<Parameters*>(this)->for_each(
        [&](const std::string& name, Eigen::Map<Vector> v) { f(name, Eigen::Map<const Vector>(v.data(), v.size())); });
  }

  bool operator==(const Parameters& other) const;

 private:
  template <typename M>
  static Eigen::Map<Vector> flat(M& m) {
    return Eigen::Map<Vector>(m.data(), m.size());
  }
};

struct MultiHeadModel {
  ModelConfig config;
  Parameters params;
  Parameters adam_m;
  Parameters adam_v;
  std::int64_t step = 0;

  int head_count() const { return static_cast<int>(params.heads.size()); }
  /// Drops optimizer history (moments and step counter).
  void reset_optimizer();
};

struct ForwardRecord {
  std::vector<Matrix> activations;      // activations[0] = inputs, back() = features
  std::vector<Matrix> preactivations;   // one per encoder layer
  std::vector<int> heads;               // head index of each logits entry
  std::vector<Matrix> logits;           // batch x num_classes, aligned with `heads`

  const Matrix& features() const { return activations.back(); }
};

/// Scaled-uniform (Glorot) weights, zero biases, deterministic in init_seed.
MultiHeadModel model_init(const ModelConfig& config);

/// Encoder only: ReLU-MLP features of each row.
Matrix encode(const MultiHeadModel& model, const Matrix& inputs);

/// Forward pass through the encoder and the requested heads (all when empty).
ForwardRecord forward(const MultiHeadModel& model, const Matrix& inputs,
                      std::span<const int> heads = {});

struct LossAndGrad {
  double loss = 0.0;
  Matrix dlogits;
};

/// Weighted mean of -log softmax(logits)[label]; weights are rescaled to mean 1.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels,
                          std::optional<std::span<const double>> sample_weights = std::nullopt);

/// Per-sample -log softmax(logits)[label].
Vector per_sample_cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Exact gradients of sum_k <dlogits_k, logits_k> over active heads. An empty
/// mask activates every head in the record.
Parameters backward(const MultiHeadModel& model, const ForwardRecord& record,
                    std::span<const Matrix> per_head_dlogits,
                    const std::vector<bool>& head_mask = {});

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool update_encoder = true;
};

/// Bias-corrected Adam. Throws NumericError naming the first non-finite array.
void adam_step(MultiHeadModel& model, const Parameters& grads, const AdamOptions& opt);

struct GradCheckResult {
  double max_relative_error = 0.0;
  Index checked = 0;
  Index skipped = 0;
};

/// Central differences of the mean-over-heads cross-entropy against
/// `backward`, on a random subset of at least `min_coords` coordinates.
/// Coordinates whose perturbation flips a ReLU (kink within reach) are skipped.
GradCheckResult grad_check(const MultiHeadModel& model, const Matrix& inputs,
                           std::span<const int> labels, double fd_eps = 1e-5,
                           Index min_coords = 200, std::uint64_t seed = 0);

/// Mean-over-heads cross-entropy loss and its gradient (all heads, all rows).
std::pair<double, Parameters> mean_head_loss(const MultiHeadModel& model, const Matrix& inputs,
                                             std::span<const int> labels);

/// Text checkpoint: "DRMLAB1" magic, config lines, then hex-float arrays for
/// the parameters and both Adam moments.
void save_checkpoint(const MultiHeadModel& model, const std::filesystem::path& path);
MultiHeadModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_string(const MultiHeadModel& model);
MultiHeadModel parse_checkpoint(const std::string& text);

}  // namespace drmlab
