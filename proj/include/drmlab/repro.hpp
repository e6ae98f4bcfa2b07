#pragma once

#include "drmlab/bound.hpp"
#include "drmlab/experiment.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace drmlab {

struct ReproOptions {
  std::filesystem::path out_dir = "runs/repro";
  bool record_wall_clock = false;
};

/// Models and streamed predictions of one gamma sweep, kept so the limits
/// can be checked against the raw head outputs.
struct GammaCase {
  std::uint64_t seed = 0;
  TrainedModel tm;
  DomainDataset target;
  std::vector<double> gammas;
  std::vector<EvalOutcome> swept;  // one per gamma
  EvalOutcome uniform;
};

struct BoundSection {
  ThresholdRule fhat;
  BoundReport report;
  Estimate gap_b_on_o;
  double seconds = 0.0;
};

/// Everything the acceptance suite reads. Timings live here only; metrics.csv
/// carries them solely when wall-clock recording is on.
struct ReproResult {
  std::vector<MetricsRow> rows;

  std::vector<double> counterexample_seconds;
  double invariant_summed_error = 0.0;
  double invariant_seconds = 0.0;
  std::vector<double> colored_seconds;
  std::vector<CorrTable> corr_counterexample;
  std::vector<CorrTable> corr_colored;
  std::vector<CorrTable> corr_rotated;
  std::vector<double> rotated_seconds;
  bool rotated_images = false;
  std::vector<GammaCase> gamma_cases;
  BoundSection bound;
};

/// Section ids used in the experiment column of metrics.csv.
namespace repro_id {
inline constexpr const char* kCounterexample = "counterexample";
inline constexpr const char* kColored = "colored_lodo";
inline constexpr const char* kRotated = "rotated";
inline constexpr const char* kRetrain = "retrain_noisy";
inline constexpr const char* kGamma = "gamma_sweep";
inline constexpr const char* kBatch = "batch_size";
inline constexpr const char* kBound = "bound";
}  // namespace repro_id

/// Base configuration of each section.
RunConfig repro_config(const std::string& section);

/// Runs every section with fixed seeds, writing metrics.csv, summary.csv and
/// the correlation/bound files under out_dir.
ReproResult run_repro(const ReproOptions& opt, std::ostream& log);

/// Bound report for one source/target pair with the threshold hypothesis
/// fit on n_train source samples; also estimates the gap of f_b on D_o.
BoundSection bound_section(Quadrant source, Quadrant target, Index n_train, std::uint64_t seed, Index n_mc);

}  // namespace drmlab
