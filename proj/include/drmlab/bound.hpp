#pragma once

#include "drmlab/core.hpp"
#include "drmlab/datagen.hpp"
#include "drmlab/numkit.hpp"

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

/// Mixture of unit-covariance Gaussians with a threshold labeling rule.
struct AnalyticDomain {
  std::string name;
  std::vector<Vector> means;
  std::vector<double> masses;
  ThresholdRule rule;

  Index dim() const { return means.front().size(); }
  double log_density(const Vector& x) const;
  /// One uniform for the component (only when there are several), then dim normals.
  Matrix sample(Index n, Rng& rng) const;
  void validate() const;
};

AnalyticDomain analytic_quadrant(Quadrant q);

/// Monte-Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

using Predictor = std::function<int(const Vector&)>;

/// Misclassification rate (1 - accuracy) of predictor on a dataset.
double empirical_error(const Predictor& f, const DomainDataset& d);

/// E_{x~target}[1{f(x) != target.rule(x)}].
Estimate adaptivity_gap(const ThresholdRule& f_source, const AnalyticDomain& target, Index n_mc, std::uint64_t seed);

/// Monte-Carlo target error of f against target.rule.
Estimate target_error(const Predictor& f, const AnalyticDomain& target, Index n_mc, std::uint64_t seed);

/// P_T(x) / P_S(x) in closed form. Throws when P_S(x) < 1e-300.
double density_ratio(const Vector& x, const AnalyticDomain& target, const AnalyticDomain& source);

inline constexpr double kRatioCap = 1e6;

struct Eq5Result {
  Estimate total;
  std::vector<Estimate> weighted_source;  // E_{D_i}[alpha_i r |f - f_i|]
  std::vector<Estimate> gap;              // alpha_i E_T[|f_i - f_T|]
  double clamp_fraction = 0.0;            // share of importance ratios hitting the cap
};

/// Right-hand side of the adaptivity-gap bound. Sample streams depend only on
/// the seed (common random numbers across alpha).
Eq5Result rhs_eq5(const Predictor& f, std::span<const AnalyticDomain> sources, const AnalyticDomain& target,
                  const Vector& alpha, Index n_mc, std::uint64_t seed);

/// Grid of axis-threshold hypotheses sign(+-(x_j - t)).
struct ThresholdGrid {
  double lo = -10.0;
  double hi = 10.0;
  Index points = 401;

  double at(Index i) const { return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1); }
};

/// 2 sup |P_A(h=1) - P_B(h=1)| over the family, on explicit samples.
Estimate h_divergence(const Matrix& samples_a, const Matrix& samples_b, const ThresholdGrid& grid = {});

/// Analytic version with common random numbers for both domains, so the
/// result is exactly symmetric and exactly 0 for identical domains.
Estimate h_divergence(const AnalyticDomain& a, const AnalyticDomain& b, Index n_mc, std::uint64_t seed,
                      const ThresholdGrid& grid = {});

struct PriorResult {
  Estimate source_error;  // eps_S(f)
  Estimate d_h;
  Estimate min_term;      // min{eps_S(f_S,f_T), eps_T(f_S,f_T)}
  Estimate total;
};

/// eps_S(f) + d_H(S,T) + min{eps_S(f_S,f_T), eps_T(f_S,f_T)} with true rules.
PriorResult rhs_prior(const Predictor& f, const AnalyticDomain& source, const AnalyticDomain& target, Index n_mc,
                      std::uint64_t seed, const ThresholdGrid& grid = {});

struct BoundReport {
  Estimate eps_target;
  std::vector<Estimate> weighted_source;
  std::vector<Estimate> gap;
  Estimate rhs_eq5;
  Estimate rhs_prior;
  Estimate d_h;                 // alpha-weighted source-to-target divergence
  double clamp_fraction = 0.0;
  Index n_mc = 0;
  bool valid = false;           // eps_target <= rhs_eq5 + 3 se
  bool tight = false;           // rhs_eq5 <= rhs_prior + 3 se
};

struct TightnessConfig {
  Predictor f;
  std::vector<AnalyticDomain> sources;
  AnalyticDomain target;
  Vector alpha;
  Index n_mc = 100000;
  std::uint64_t seed = 0;
};

/// Assembles every bound term. With several sources the prior bound is the
/// alpha-weighted mix of the single-source prior bounds.
BoundReport tightness_report(const TightnessConfig& cfg);

void write_bound_csv(std::ostream& os, const BoundReport& r);
void write_bound_text(std::ostream& os, const BoundReport& r);

/// Threshold-family empirical risk minimizer over the grid (both axes, both
/// orientations); ties keep the first hypothesis in (axis, t, orientation) order.
ThresholdRule fit_threshold(const DomainDataset& d, const ThresholdGrid& grid = {});

struct SharedThresholdSweep {
  ThresholdRule best;
  double summed_error = 0.0;  // sum over domains of the per-domain error
};

/// Best single threshold hypothesis for all domains jointly.
SharedThresholdSweep sweep_shared_threshold(std::span<const DomainDataset> domains, const ThresholdGrid& grid = {});

}  // namespace drmlab
