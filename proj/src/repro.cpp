#include "drmlab/repro.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

namespace drmlab {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const std::vector<std::uint64_t> kSeeds3{0, 1, 2};
const std::vector<std::uint64_t> kSeeds5{0, 1, 2, 3, 4};
const std::vector<double> kGammas{0.0, 0.5, 1.0, 2.0, 4.0, 8.0, kGammaInfinity};

void save(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void save_corr(const std::filesystem::path& path, const CorrTable& t) {
  std::ostringstream os;
  write_corr_csv(os, t.v, t.rows, t.cols);
  save(path, os.str());
}

SelectionStrategy uniform_strategy() {
  SelectionStrategy s;
  s.kind = SelectKind::Uniform;
  s.gamma = 0.0;
  return s;
}

}  // namespace

RunConfig repro_config(const std::string& section) {
  RunConfig cfg;
  cfg.set("run.experiment", section);
  if (section == repro_id::kColored) {
    cfg.set("data.task", "colored");
  } else if (section == repro_id::kRotated) {
    cfg.set("data.task", "rotated");
  } else if (section == repro_id::kRetrain) {
    cfg.set("data.label_noise", "0.1");
  }
  return cfg;
}

BoundSection bound_section(Quadrant source, Quadrant target, Index n_train, std::uint64_t seed, Index n_mc) {
  const auto t0 = Clock::now();
  const SeedPlan sp = seed_plan(seed);
  Rng rng = rng_create(sp.data);
  const DomainDataset train = gen_quadrant(source, n_train, rng);
  BoundSection sec;
  sec.fhat = fit_threshold(train);
  TightnessConfig tc;
  const ThresholdRule fhat = sec.fhat;
  tc.f = [fhat](const Vector& x) { return fhat(x); };
  tc.sources = {analytic_quadrant(source)};
  tc.target = analytic_quadrant(target);
  tc.alpha = Vector::Ones(1);
  tc.n_mc = n_mc;
  tc.seed = sp.eval;
  sec.report = tightness_report(tc);
  sec.gap_b_on_o = adaptivity_gap(quadrant_rule(Quadrant::b), analytic_quadrant(Quadrant::o), n_mc, sp.stream);
  sec.seconds = since(t0);
  return sec;
}

ReproResult run_repro(const ReproOptions& opt, std::ostream& log) {
  std::filesystem::create_directories(opt.out_dir);
  ReproResult res;
  std::ostringstream summary;
  summary << "key,value\n";
  const auto keep = [&](EvalOutcome out) {
    if (!opt.record_wall_clock) out.row.wall_clock = 0.0;
    res.rows.push_back(out.row);
    return out;
  };

  // Counterexample: DRM on r, b with PEM; the same models feed the
  // correlation matrices, the gamma sweep and the batch-size check.
  {
    const RunConfig cfg = repro_config(repro_id::kCounterexample);
    RunConfig batch8 = cfg;
    batch8.set("run.experiment", repro_id::kBatch);
    batch8.set("adapt.batch_size", "8");
    RunConfig batch32 = batch8;
    batch32.set("adapt.batch_size", "32");
    RunConfig gamma_cfg = cfg;
    gamma_cfg.set("run.experiment", repro_id::kGamma);
    const SelectionStrategy pem = strategy_from(cfg);
    for (const auto seed : kSeeds3) {
      const auto t0 = Clock::now();
      const TaskSplit split = build_task(cfg, seed).front();
      TrainedModel tm = train_split(cfg, split, seed, "drm");
      for (const auto& t : split.targets) keep(evaluate_target(cfg, tm, split, t, pem, AdaptMode::None, AdaptScope::Clf, seed));
      res.counterexample_seconds.push_back(since(t0));
      log << "counterexample seed " << seed << " done\n";

      res.corr_counterexample.push_back(split_corr(tm, split));
      save_corr(opt.out_dir / ("corr.counterexample.s" + std::to_string(seed) + ".csv"), res.corr_counterexample.back());

      for (const auto* bc : {&batch8, &batch32})
        for (const auto& t : split.targets)
          keep(evaluate_target(*bc, tm, split, t, pem, AdaptMode::None, AdaptScope::Clf, seed));

      GammaCase gc;
      gc.seed = seed;
      gc.target = split.targets.front();
      gc.gammas = kGammas;
      gc.uniform = keep(evaluate_target(gamma_cfg, tm, split, gc.target, uniform_strategy(), AdaptMode::None,
                                        AdaptScope::Clf, seed));
      for (const double g : kGammas) {
        SelectionStrategy s = pem;
        s.gamma = g;
        gc.swept.push_back(keep(evaluate_target(gamma_cfg, tm, split, gc.target, s, AdaptMode::None, AdaptScope::Clf, seed)));
      }
      gc.tm = std::move(tm);
      res.gamma_cases.push_back(std::move(gc));
    }
  }

  // Invariant representation: best shared threshold on transformed r, b.
  {
    const auto t0 = Clock::now();
    const auto four = gen_four_gaussians(2000, seed_plan(0).data);
    const std::vector<DomainDataset> rb{apply_invariant_transform(four[2]), apply_invariant_transform(four[3])};
    const SharedThresholdSweep sw = sweep_shared_threshold(rb);
    res.invariant_summed_error = sw.summed_error;
    res.invariant_seconds = since(t0);
    summary << "invariant.summed_error," << format_real(sw.summed_error) << '\n';
    summary << "invariant.best_axis," << sw.best.axis << '\n';
    summary << "invariant.best_threshold," << format_real(sw.best.threshold) << '\n';
  }

  // Colored task, leave one domain out: DRM with PEM and Uniform, pooled ERM.
  {
    const RunConfig cfg = repro_config(repro_id::kColored);
    const SelectionStrategy pem = strategy_from(cfg);
    for (const auto seed : kSeeds3) {
      const auto t0 = Clock::now();
      for (const auto& split : build_task(cfg, seed)) {
        const TrainedModel drm = train_split(cfg, split, seed, "drm");
        const TrainedModel erm = train_split(cfg, split, seed, "erm");
        for (const auto& t : split.targets) {
          keep(evaluate_target(cfg, drm, split, t, pem, AdaptMode::None, AdaptScope::Clf, seed));
          keep(evaluate_target(cfg, drm, split, t, uniform_strategy(), AdaptMode::None, AdaptScope::Clf, seed));
          keep(evaluate_target(cfg, erm, split, t, pem, AdaptMode::None, AdaptScope::Clf, seed));
        }
        res.corr_colored.push_back(split_corr(drm, split));
        save_corr(opt.out_dir / ("corr.colored.s" + std::to_string(seed) + "." + split.label + ".csv"),
                  res.corr_colored.back());
      }
      res.colored_seconds.push_back(since(t0));
      log << "colored seed " << seed << " done\n";
    }
  }

  // Rotated domains: per-head entropy on the unseen 0 degree domain.
  {
    const RunConfig cfg = repro_config(repro_id::kRotated);
    const SelectionStrategy pem = strategy_from(cfg);
    for (const auto seed : kSeeds3) {
      const auto t0 = Clock::now();
      const TaskSplit split = build_task(cfg, seed).front();
      res.rotated_images = split.images;
      const TrainedModel tm = train_split(cfg, split, seed, "drm");
      for (const auto& t : split.targets) keep(evaluate_target(cfg, tm, split, t, pem, AdaptMode::None, AdaptScope::Clf, seed));
      res.corr_rotated.push_back(split_corr(tm, split));
      save_corr(opt.out_dir / ("corr.rotated.s" + std::to_string(seed) + ".csv"), res.corr_rotated.back());
      res.rotated_seconds.push_back(since(t0));
      log << "rotated seed " << seed << " done\n";
    }
    summary << "rotated.images," << (res.rotated_images ? 1 : 0) << '\n';
  }

  // Retraining on the counterexample with noisy source labels.
  {
    const RunConfig cfg = repro_config(repro_id::kRetrain);
    const SelectionStrategy pem = strategy_from(cfg);
    for (const auto seed : kSeeds5) {
      const TaskSplit split = build_task(cfg, seed).front();
      const TrainedModel tm = train_split(cfg, split, seed, "drm");
      for (const auto& t : split.targets) {
        keep(evaluate_target(cfg, tm, split, t, pem, AdaptMode::None, AdaptScope::Clf, seed));
        for (const auto mode : {AdaptMode::VanillaRetrain, AdaptMode::DrmRetrain})
          for (const auto scope : {AdaptScope::Clf, AdaptScope::Full})
            keep(evaluate_target(cfg, tm, split, t, pem, mode, scope, seed));
      }
      log << "retrain seed " << seed << " done\n";
    }
  }

  // Bound validity and tightness.
  {
    res.bound = bound_section(Quadrant::r, Quadrant::o, 2000, 0, 100000);
    std::ostringstream csv, text;
    write_bound_csv(csv, res.bound.report);
    write_bound_text(text, res.bound.report);
    save(opt.out_dir / "bound.csv", csv.str());
    save(opt.out_dir / "bound.txt", text.str());
    summary << "bound.fhat_axis," << res.bound.fhat.axis << '\n';
    summary << "bound.fhat_threshold," << format_real(res.bound.fhat.threshold) << '\n';
    summary << "bound.gap_b_on_o," << format_real(res.bound.gap_b_on_o.value) << '\n';
    MetricsRow r;
    r.experiment = repro_id::kBound;
    r.dataset = "counterexample";
    r.target = "o";
    r.method = "threshold_erm";
    r.strategy = "none";
    r.split = "source_r";
    r.accuracy = 1.0 - res.bound.report.eps_target.value;
    if (opt.record_wall_clock) r.wall_clock = res.bound.seconds;
    res.rows.push_back(r);
  }

  std::ostringstream metrics;
  write_metrics_csv(metrics, res.rows);
  save(opt.out_dir / "metrics.csv", metrics.str());
  save(opt.out_dir / "summary.csv", summary.str());
  return res;
}

}  // namespace drmlab
