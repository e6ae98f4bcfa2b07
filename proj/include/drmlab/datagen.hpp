#pragma once

#include "drmlab/core.hpp"
#include "drmlab/numkit.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

/// Axis-aligned threshold labeling rule: label 1 iff x[axis] > t (or <= t
/// when `one_when_above` is false).
struct ThresholdRule {
  Index axis = 0;
  double threshold = 0.0;
  bool one_when_above = true;

  template <typename Derived>
  int operator()(const Eigen::MatrixBase<Derived>& x) const {
    const bool above = x.derived().coeff(axis) > threshold;
    return above == one_when_above ? 1 : 0;
  }
  ThresholdRule complement() const { return {axis, threshold, !one_when_above}; }
  bool operator==(const ThresholdRule&) const = default;
};

/// Generating distribution of an analytic domain.
struct GeneratorParams {
  std::vector<Vector> means;    // unit-covariance Gaussian components
  std::vector<double> masses;   // component weights, sum to 1
  std::optional<ThresholdRule> rule;
  std::optional<double> spurious_flip;  // p^d of the colored task
  double label_noise = 0.0;
};

struct DomainDataset {
  int domain_id = 0;
  std::string name;
  Matrix inputs;
  std::vector<int> labels;
  int num_classes = 2;
  std::optional<GeneratorParams> generator_params;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
};

/// Throws when labels/rows disagree or a label is out of range.
void validate(const DomainDataset& d);
/// Throws unless every domain shares feature dimension and class count.
void validate_consistent(std::span<const DomainDataset> domains);

DomainDataset subset(const DomainDataset& d, std::span<const Index> rows);
/// Concatenation in the given order; the result keeps the first domain's id.
DomainDataset pool(std::span<const DomainDataset> domains, int domain_id = 0);

// ---------------------------------------------------------------------------
// Four-Gaussian counterexample.

enum class Quadrant { o = 0, g = 1, r = 2, b = 3 };

/// Mean of the named domain: o=[-3,3], g=[3,3], r=[-3,-3], b=[3,-3].
Vector quadrant_mean(Quadrant q);
/// f_o = f_r = 1{x1 > -3}; f_g = f_b = 1{x1 <= 3}.
ThresholdRule quadrant_rule(Quadrant q);
std::string quadrant_name(Quadrant q);

DomainDataset gen_quadrant(Quadrant q, Index n, Rng& rng);
/// Domains o, g, r, b in that order, each drawn from its own split stream.
std::vector<DomainDataset> gen_four_gaussians(Index n_per_domain, std::uint64_t seed);

/// x1 -> 1{x1<0}(x1+3) + 1{x1>0}(x1-3); x1 == 0 maps to 0.
DomainDataset apply_invariant_transform(const DomainDataset& d);

/// Flips a fraction of labels in place (each independently with prob p).
void inject_label_noise(DomainDataset& d, double p, Rng& rng);

// ---------------------------------------------------------------------------
// Abstract colored task: features (digit class u, color z) with N(0, 0.1^2)
// jitter; y flips u with prob label_noise, z flips y with prob p_d.

inline constexpr double kColorJitter = 0.1;

DomainDataset gen_colored_synthetic(Index n, double p_d, double label_noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// IDX container.

struct RawIdx {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;

RawIdx parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const RawIdx& raw);
RawIdx load_idx(const std::filesystem::path& path);

/// Rotates a 28x28 image about (13.5, 13.5) with bilinear sampling, zero fill.
Matrix rotate_image(const Matrix& image, double angle_deg);

/// Images as rows of 784 values in [0,1]; call with an images/labels IDX pair.
struct ImagePool {
  Matrix pixels;           // n x 784, raw 0..255
  std::vector<int> labels;
};
ImagePool image_pool(const RawIdx& images, const RawIdx& labels, Index limit);

/// Disjoint, class-stratified subsets of the pool, one per angle, rotated
/// and scaled to [0,1].
std::vector<DomainDataset> build_rotated_domains(const ImagePool& pool,
                                                 std::span<const double> angles,
                                                 Index per_domain, std::uint64_t seed);

/// Stand-in when no IDX files are available: 10 classes whose means sit on
/// circles in four coordinate planes (radius 2.5, class c at 36*k_p*c degrees
/// in plane p, k = {1,3,7,9}); a domain at angle a rotates every plane by a.
std::vector<DomainDataset> build_rotated_clusters(std::span<const double> angles,
                                                  Index per_domain, std::uint64_t seed);

// ---------------------------------------------------------------------------

std::pair<DomainDataset, DomainDataset> split_train_eval(const DomainDataset& d,
                                                         double train_frac,
                                                         std::uint64_t seed);

}  // namespace drmlab
