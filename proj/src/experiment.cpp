#include "drmlab/experiment.hpp"

#include "drmlab/bound.hpp"
#include "drmlab/repro.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace drmlab {

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

constexpr const char* kMetricsHeader =
    "experiment,dataset,target,method,strategy,gamma,normalize,seed,split,accuracy,mean_entropy,wall_clock_seconds";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
  std::ostringstream os;
  fn(os);
  write_text(path, os.str());
}

Quadrant parse_quadrant(const std::string& s) {
  for (auto q : {Quadrant::o, Quadrant::g, Quadrant::r, Quadrant::b})
    if (quadrant_name(q) == s) return q;
  throw ConfigError("unknown counterexample domain '" + s + "' (o, g, r, b)");
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return Rng(seed, stream).next_u64(); }

std::vector<DomainDataset> counterexample_domains(std::span<const std::string> names, Index n, std::uint64_t seed) {
  const auto all = gen_four_gaussians(n, seed);
  std::vector<DomainDataset> out;
  for (const auto& name : names) out.push_back(all[static_cast<std::size_t>(parse_quadrant(name))]);
  return out;
}

std::string angle_name(double a) { return "rot" + format_real(a); }

std::filesystem::path idx_dir(const RunConfig& cfg) {
  std::string dir = cfg.str("data.idx_dir");
  if (dir.empty()) {
    const char* env = std::getenv("DRMLAB_DATA_DIR");
    if (env != nullptr) dir = env;
  }
  return dir;
}

std::vector<DomainDataset> rotated_domains(const RunConfig& cfg, std::span<const double> angles, std::uint64_t seed,
                                           bool& images) {
  const auto dir = idx_dir(cfg);
  const auto img = dir / "train-images-idx3-ubyte";
  const auto lab = dir / "train-labels-idx1-ubyte";
  images = !dir.empty() && std::filesystem::exists(img) && std::filesystem::exists(lab);
  const Index per_domain = cfg.integer("data.per_domain");
  std::vector<DomainDataset> out;
  if (images) {
    const ImagePool pool = image_pool(load_idx(img), load_idx(lab), cfg.integer("data.pool_size"));
    out = build_rotated_domains(pool, angles, per_domain, seed);
  } else {
    if (cfg.flag("data.require_idx"))
      throw IoError("MNIST IDX files not found in '" + dir.string() + "' and data.require_idx is set");
    out = build_rotated_clusters(angles, per_domain, seed);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].name = angle_name(angles[i]);
  return out;
}

void maybe_add_noise(const RunConfig& cfg, std::vector<DomainDataset>& sources, std::uint64_t seed) {
  const double p = cfg.real("data.label_noise");
  if (p < 0.0 || p >= 0.5) throw ConfigError("data.label_noise must lie in [0, 0.5)");
  if (p == 0.0) return;
  Rng rng = rng_create(seed);
  for (auto& d : sources) {
    Rng child = rng.split();
    inject_label_noise(d, p, child);
  }
}

void relabel(std::vector<DomainDataset>& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i) ds[i].domain_id = static_cast<int>(i);
}

}  // namespace

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    for (const std::string* f : {&r.experiment, &r.dataset, &r.target, &r.method, &r.strategy, &r.split})
      if (f->find_first_of(",\n\r") != std::string::npos)
        throw FormatError("metrics.csv: field '" + *f + "' contains a separator");
    os << r.experiment << ',' << r.dataset << ',' << r.target << ',' << r.method << ',' << r.strategy << ','
       << format_real(r.gamma) << ',' << (r.normalize ? "true" : "false") << ',' << r.seed << ',' << r.split << ','
       << format_real(r.accuracy) << ',' << format_real(r.mean_entropy) << ',' << format_real(r.wall_clock) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw FormatError("metrics.csv: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 12) throw FormatError("metrics.csv: expected 12 columns, got " + std::to_string(c.size()));
    MetricsRow r;
    r.experiment = c[0];
    r.dataset = c[1];
    r.target = c[2];
    r.method = c[3];
    r.strategy = c[4];
    r.gamma = parse_real("gamma", c[5]);
    r.normalize = c[6] == "true";
    r.seed = std::stoull(c[7]);
    r.split = c[8];
    r.accuracy = parse_real("accuracy", c[9]);
    r.mean_entropy = parse_real("mean_entropy", c[10]);
    r.wall_clock = parse_real("wall_clock_seconds", c[11]);
    rows.push_back(std::move(r));
  }
  return rows;
}

SeedPlan seed_plan(std::uint64_t seed) {
  Rng root = rng_create(seed);
  SeedPlan p{};
  p.data = root.next_u64();
  p.eval = root.next_u64();
  p.noise = root.next_u64();
  p.init = root.next_u64();
  p.train = root.next_u64();
  p.disc = root.next_u64();
  p.stream = root.next_u64();
  return p;
}

std::vector<TaskSplit> build_task(const RunConfig& cfg, std::uint64_t seed) {
  const SeedPlan sp = seed_plan(seed);
  const std::string task = cfg.str("data.task");
  std::vector<TaskSplit> out;
  if (task == "counterexample") {
    const auto sources = cfg.list("data.sources");
    const auto targets = cfg.list("data.targets");
    if (sources.empty()) throw ConfigError("data.sources must name at least one domain");
    TaskSplit s;
    s.dataset = task;
    s.label = "main";
    s.sources = counterexample_domains(sources, cfg.integer("data.n_train"), sp.data);
    s.source_eval = counterexample_domains(sources, cfg.integer("data.n_eval"), sp.eval);
    s.targets = counterexample_domains(targets, cfg.integer("data.n_eval"), sp.eval);
    maybe_add_noise(cfg, s.sources, sp.noise);
    if (cfg.flag("data.invariant"))
      for (auto* group : {&s.sources, &s.source_eval, &s.targets})
        for (auto& d : *group) d = apply_invariant_transform(d);
    relabel(s.sources);
    out.push_back(std::move(s));
  } else if (task == "colored") {
    const auto p = cfg.reals("data.p_d");
    if (p.size() < 2) throw ConfigError("data.p_d needs at least two domains");
    const double noise = cfg.real("data.colored_noise");
    std::vector<DomainDataset> train, eval;
    for (std::size_t d = 0; d < p.size(); ++d) {
      train.push_back(gen_colored_synthetic(cfg.integer("data.n_train"), p[d], noise, derive(sp.data, d)));
      eval.push_back(gen_colored_synthetic(cfg.integer("data.n_eval"), p[d], noise, derive(sp.eval, d)));
      train.back().name = eval.back().name = "p" + format_real(p[d]);
    }
    std::vector<std::size_t> held;
    for (const auto& t : cfg.list("data.lodo_targets")) {
      const auto idx = static_cast<std::size_t>(parse_real("data.lodo_targets", t));
      if (idx >= p.size()) throw ConfigError("data.lodo_targets: index " + t + " out of range");
      held.push_back(idx);
    }
    if (held.empty())
      for (std::size_t d = 0; d < p.size(); ++d) held.push_back(d);
    for (const std::size_t t : held) {
      TaskSplit s;
      s.dataset = task;
      s.label = train[t].name;
      for (std::size_t d = 0; d < p.size(); ++d) {
        if (d == t) continue;
        s.sources.push_back(train[d]);
        s.source_eval.push_back(eval[d]);
      }
      s.targets.push_back(eval[t]);
      maybe_add_noise(cfg, s.sources, sp.noise);
      relabel(s.sources);
      out.push_back(std::move(s));
    }
  } else if (task == "rotated") {
    const auto src_angles = cfg.reals("data.source_angles");
    const auto tgt_angles = cfg.reals("data.target_angles");
    if (src_angles.empty()) throw ConfigError("data.source_angles must not be empty");
    std::vector<double> angles = src_angles;
    angles.insert(angles.end(), tgt_angles.begin(), tgt_angles.end());
    TaskSplit s;
    s.dataset = task;
    s.label = "main";
    const auto domains = rotated_domains(cfg, angles, sp.data, s.images);
    const double frac = cfg.real("data.train_frac");
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (i < src_angles.size()) {
        auto [tr, ev] = split_train_eval(domains[i], frac, derive(sp.eval, i));
        s.sources.push_back(std::move(tr));
        s.source_eval.push_back(std::move(ev));
      } else {
        s.targets.push_back(domains[i]);
      }
    }
    maybe_add_noise(cfg, s.sources, sp.noise);
    relabel(s.sources);
    out.push_back(std::move(s));
  } else {
    throw ConfigError("data.task: unknown task '" + task + "' (counterexample, colored, rotated)");
  }
  return out;
}

ModelConfig model_config_for(const RunConfig& cfg, const TaskSplit& split, bool single_head, std::uint64_t seed) {
  ModelConfig mc;
  mc.input_dim = split.sources.front().dim();
  mc.num_classes = split.sources.front().num_classes;
  const auto hidden = cfg.list("model.hidden");
  if (hidden.size() == 1 && hidden.front() == "auto") {
    mc.hidden_dims = split.images ? std::vector<Index>{256, 128} : std::vector<Index>{64, 64};
  } else {
    mc.hidden_dims.clear();
    for (const auto& h : hidden) mc.hidden_dims.push_back(static_cast<Index>(parse_real("model.hidden", h)));
  }
  const Index fd = cfg.integer("model.feature_dim");
  mc.feature_dim = fd > 0 ? fd : (split.images ? 128 : 64);
  mc.num_heads = single_head ? 1 : static_cast<int>(split.sources.size());
  mc.extra_global_head = !single_head && cfg.flag("model.global_head");
  mc.init_seed = seed_plan(seed).init;
  mc.validate();
  return mc;
}

TrainConfig train_config_for(const RunConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.steps = cfg.integer("train.steps");
  tc.batch_per_domain = cfg.integer("train.batch");
  tc.lr = cfg.real("train.lr");
  tc.seed = seed_plan(seed).train;
  const std::string rw = cfg.str("train.reweight");
  if (rw == "tau") {
    tc.reweight = {Reweight::Kind::FixedTau, cfg.real("train.reweight_value")};
  } else if (rw == "radius") {
    tc.reweight = {Reweight::Kind::Radius, cfg.real("train.reweight_value")};
  } else if (rw != "none") {
    throw ConfigError("train.reweight: unknown value '" + rw + "' (none, tau, radius)");
  }
  try {
    tc.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  return tc;
}

SelectionStrategy strategy_from(const RunConfig& cfg) {
  SelectionStrategy s;
  s.kind = parse_select_kind(cfg.str("select.kind"));
  s.gamma = cfg.real("select.gamma");
  s.normalize_heads = cfg.flag("select.normalize");
  s.score_floor = cfg.real("select.floor");
  s.validate();
  return s;
}

TrainedModel attach_model(const RunConfig& cfg, const TaskSplit& split, std::uint64_t seed, MultiHeadModel model) {
  (void)cfg;
  (void)seed;
  TrainedModel tm;
  tm.method = model.config.num_heads == 1 && split.sources.size() > 1 ? "erm" : "drm";
  tm.model = std::move(model);
  if (tm.method == "drm") tm.stats = compute_domain_stats(tm.model, split.sources);
  return tm;
}

TrainedModel train_split(const RunConfig& cfg, const TaskSplit& split, std::uint64_t seed,
                         const std::string& method) {
  TrainConfig tc = train_config_for(cfg, seed);
  TrainResult res;
  if (method == "drm") {
    res = train_drm(model_init(model_config_for(cfg, split, false, seed)), split.sources, tc);
  } else if (method == "erm") {
    res = train_erm(model_init(model_config_for(cfg, split, true, seed)), pool(split.sources), tc);
  } else {
    throw ConfigError("train.method: unknown method '" + method + "' (drm, erm)");
  }
  TrainedModel tm = attach_model(cfg, split, seed, std::move(res.model));
  tm.method = method;
  tm.trace = std::move(res.trace);
  return tm;
}

void ensure_discriminator(const RunConfig& cfg, TrainedModel& tm, const TaskSplit& split, std::uint64_t seed) {
  if (tm.disc || tm.method != "drm") return;
  TrainConfig dc;
  dc.steps = cfg.integer("disc.steps");
  dc.batch_per_domain = cfg.integer("train.batch");
  dc.lr = cfg.real("disc.lr");
  dc.seed = seed_plan(seed).disc;
  tm.disc = train_discriminator(tm.model, split.sources, dc);
}

EvalOutcome evaluate_target(const RunConfig& cfg, const TrainedModel& tm, const TaskSplit& split,
                            const DomainDataset& target, const SelectionStrategy& strategy, AdaptMode mode,
                            AdaptScope scope, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  AdaptConfig ac;
  ac.mode = mode;
  ac.scope = scope;
  ac.batch_size = cfg.integer("adapt.batch_size");
  ac.adapt_lr = cfg.real("adapt.lr");
  ac.steps_per_batch = cfg.integer("adapt.steps");
  ac.seed = seed_plan(seed).stream;
  const bool single = tm.model.config.total_heads() == 1;
  // A one-head model has nothing to select; Uniform avoids needing artifacts.
  SelectionStrategy s = strategy;
  if (single) s.kind = SelectKind::Uniform;

  EvalOutcome out;
  out.stream = stream_eval(tm.model, tm.context(), s, target, ac);
  MetricsRow& r = out.row;
  r.experiment = cfg.str("run.experiment");
  r.dataset = split.dataset;
  r.target = target.name;
  r.method = tm.method + "/" + to_string(mode) + "/" + to_string(scope);
  r.strategy = single ? "single" : to_string(strategy.kind);
  r.gamma = strategy.gamma;
  r.normalize = strategy.normalize_heads;
  r.seed = seed;
  r.split = split.label;
  r.accuracy = out.stream.accuracy;
  double h = 0.0;
  for (const auto& tr : out.stream.trace) h += tr.mean_entropy * static_cast<double>(tr.n);
  r.mean_entropy = h / static_cast<double>(target.size());
  if (cfg.flag("run.wall_clock"))
    r.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Matrix corr_matrix(const MultiHeadModel& model, std::span<const DomainDataset> domains) {
  const int heads = model.config.total_heads();
  Matrix v(static_cast<Index>(domains.size()), heads);
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].size() == 0) throw ArgumentError("corr_matrix: empty domain '" + domains[i].name + "'");
    const ForwardRecord rec = forward(model, domains[i].inputs);
    for (int j = 0; j < heads; ++j) {
      double h = 0.0;
      for (Index s = 0; s < domains[i].size(); ++s)
        h += entropy(softmax(Vector(rec.logits[static_cast<std::size_t>(j)].row(s).transpose())));
      v(static_cast<Index>(i), j) = h / static_cast<double>(domains[i].size());
    }
  }
  return v;
}

void write_corr_csv(std::ostream& os, const Matrix& v, std::span<const std::string> row_names,
                    std::span<const std::string> col_names) {
  os << "domain";
  for (const auto& c : col_names) os << ",head_" << c;
  os << '\n';
  for (Index i = 0; i < v.rows(); ++i) {
    os << row_names[static_cast<std::size_t>(i)];
    for (Index j = 0; j < v.cols(); ++j) os << ',' << format_real(v(i, j));
    os << '\n';
  }
}

CorrTable split_corr(const TrainedModel& tm, const TaskSplit& split) {
  CorrTable t;
  std::vector<DomainDataset> domains = split.source_eval;
  domains.insert(domains.end(), split.targets.begin(), split.targets.end());
  t.v = corr_matrix(tm.model, domains);
  for (const auto& d : domains) t.rows.push_back(d.name);
  if (tm.method == "erm") {
    t.cols.push_back("pooled");
  } else {
    for (const auto& d : split.sources) t.cols.push_back(d.name);
    if (tm.model.config.extra_global_head) t.cols.push_back("global");
  }
  return t;
}

std::filesystem::path experiment_dir(const RunConfig& cfg) {
  return std::filesystem::path(cfg.str("run.out")) / cfg.str("run.experiment");
}

namespace {

struct RunContext {
  const RunConfig& cfg;
  std::filesystem::path dir;
  std::ostream& log;
  std::vector<MetricsRow> rows;
  bool trace_written = false;

  std::vector<std::uint64_t> seeds() const {
    const Index n = cfg.integer("run.num_seeds");
    if (n < 1) throw ConfigError("run.num_seeds must be >= 1");
    std::vector<std::uint64_t> s;
    for (Index i = 0; i < n; ++i) s.push_back(cfg.u64("run.seed") + static_cast<std::uint64_t>(i));
    return s;
  }

  std::filesystem::path ckpt_path(std::uint64_t seed, const TaskSplit& split) const {
    return dir / ("model.s" + std::to_string(seed) + "." + split.label + ".ckpt");
  }

  void write_stream_trace_once(const StreamResult& s) {
    if (trace_written) return;
    write_file(dir / "trace.csv", [&](std::ostream& os) { write_stream_trace(os, s.trace); });
    trace_written = true;
  }

  void write_metrics() const {
    write_file(dir / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rows); });
  }
};

std::vector<AdaptMode> adapt_modes(const RunConfig& cfg) {
  std::vector<AdaptMode> out;
  for (const auto& m : cfg.list("adapt.mode")) out.push_back(parse_adapt_mode(m));
  if (out.empty()) throw ConfigError("adapt.mode must not be empty");
  return out;
}

std::vector<AdaptScope> adapt_scopes(const RunConfig& cfg) {
  std::vector<AdaptScope> out;
  for (const auto& s : cfg.list("adapt.scope")) out.push_back(parse_adapt_scope(s));
  if (out.empty()) throw ConfigError("adapt.scope must not be empty");
  return out;
}

bool needs_discriminator(const SelectionStrategy& s) { return s.kind == SelectKind::NNM; }

void cmd_gen_data(RunContext& rc) {
  for (const auto seed : rc.seeds()) {
    for (const auto& split : build_task(rc.cfg, seed)) {
      const auto dump = [&](const DomainDataset& d, const std::string& part) {
        const auto path = rc.dir / ("data.s" + std::to_string(seed) + "." + split.label + "." + part + "." + d.name + ".csv");
        write_file(path, [&](std::ostream& os) {
          for (Index j = 0; j < d.dim(); ++j) os << 'x' << j << ',';
          os << "y\n";
          for (Index i = 0; i < d.size(); ++i) {
            for (Index j = 0; j < d.dim(); ++j) os << format_real(d.inputs(i, j)) << ',';
            os << d.labels[static_cast<std::size_t>(i)] << '\n';
          }
        });
      };
      for (const auto& d : split.sources) dump(d, "train");
      for (const auto& d : split.source_eval) dump(d, "eval");
      for (const auto& d : split.targets) dump(d, "target");
    }
  }
  rc.log << "wrote datasets to " << rc.dir.string() << '\n';
}

void cmd_train(RunContext& rc) {
  const SelectionStrategy strategy = strategy_from(rc.cfg);
  bool first = true;
  for (const auto seed : rc.seeds()) {
    for (const auto& split : build_task(rc.cfg, seed)) {
      TrainedModel tm = train_split(rc.cfg, split, seed, rc.cfg.str("train.method"));
      save_checkpoint(tm.model, rc.ckpt_path(seed, split));
      if (first) {
        save_checkpoint(tm.model, rc.dir / "model.ckpt");
        write_file(rc.dir / "trace.csv", [&](std::ostream& os) { write_loss_trace(os, tm.trace); });
        first = false;
      }
      if (needs_discriminator(strategy)) ensure_discriminator(rc.cfg, tm, split, seed);
      for (const auto& t : split.targets)
        rc.rows.push_back(
            evaluate_target(rc.cfg, tm, split, t, strategy, AdaptMode::None, AdaptScope::Clf, seed).row);
    }
  }
  rc.trace_written = true;
}

void cmd_eval(RunContext& rc, bool adapting) {
  const SelectionStrategy strategy = strategy_from(rc.cfg);
  const auto modes = adapting ? adapt_modes(rc.cfg) : std::vector<AdaptMode>{AdaptMode::None};
  const auto scopes = adapting ? adapt_scopes(rc.cfg) : std::vector<AdaptScope>{AdaptScope::Clf};
  for (const auto seed : rc.seeds()) {
    for (const auto& split : build_task(rc.cfg, seed)) {
      const auto path = rc.ckpt_path(seed, split);
      if (!std::filesystem::exists(path))
        throw ArgumentError("no checkpoint at " + path.string() + "; run 'drmlab train' with the same config first");
      TrainedModel tm = attach_model(rc.cfg, split, seed, load_checkpoint(path));
      if (needs_discriminator(strategy)) ensure_discriminator(rc.cfg, tm, split, seed);
      for (const auto& t : split.targets)
        for (const auto mode : modes)
          for (const auto scope : scopes) {
            if (mode == AdaptMode::None && scope != scopes.front()) continue;
            auto out = evaluate_target(rc.cfg, tm, split, t, strategy, mode, scope, seed);
            rc.write_stream_trace_once(out.stream);
            rc.rows.push_back(std::move(out.row));
          }
    }
  }
}

void cmd_sweep_gamma(RunContext& rc) {
  const SelectionStrategy base = strategy_from(rc.cfg);
  const auto gammas = rc.cfg.reals("sweep.gammas");
  if (gammas.empty()) throw ConfigError("sweep.gammas must not be empty");
  for (const auto seed : rc.seeds()) {
    for (const auto& split : build_task(rc.cfg, seed)) {
      TrainedModel tm = train_split(rc.cfg, split, seed, "drm");
      if (needs_discriminator(base)) ensure_discriminator(rc.cfg, tm, split, seed);
      for (const auto& t : split.targets) {
        SelectionStrategy uni = base;
        uni.kind = SelectKind::Uniform;
        uni.gamma = 0.0;
        rc.rows.push_back(evaluate_target(rc.cfg, tm, split, t, uni, AdaptMode::None, AdaptScope::Clf, seed).row);
        for (const double g : gammas) {
          SelectionStrategy s = base;
          s.gamma = g;
          s.validate();
          auto out = evaluate_target(rc.cfg, tm, split, t, s, AdaptMode::None, AdaptScope::Clf, seed);
          rc.write_stream_trace_once(out.stream);
          rc.rows.push_back(std::move(out.row));
        }
      }
    }
  }
}

void cmd_compare_select(RunContext& rc) {
  const SelectionStrategy base = strategy_from(rc.cfg);
  std::vector<SelectKind> kinds;
  for (const auto& k : rc.cfg.list("sweep.strategies")) kinds.push_back(parse_select_kind(k));
  if (kinds.empty()) throw ConfigError("sweep.strategies must not be empty");
  for (const auto seed : rc.seeds()) {
    for (const auto& split : build_task(rc.cfg, seed)) {
      TrainedModel tm = train_split(rc.cfg, split, seed, "drm");
      ensure_discriminator(rc.cfg, tm, split, seed);
      for (const auto& t : split.targets)
        for (const auto k : kinds) {
          SelectionStrategy s = base;
          s.kind = k;
          if (k == SelectKind::Uniform) s.gamma = 0.0;
          auto out = evaluate_target(rc.cfg, tm, split, t, s, AdaptMode::None, AdaptScope::Clf, seed);
          rc.write_stream_trace_once(out.stream);
          rc.rows.push_back(std::move(out.row));
        }
    }
  }
}

void cmd_corr_matrix(RunContext& rc) {
  const SelectionStrategy strategy = strategy_from(rc.cfg);
  bool first = true;
  for (const auto seed : rc.seeds()) {
    for (const auto& split : build_task(rc.cfg, seed)) {
      TrainedModel tm = train_split(rc.cfg, split, seed, "drm");
      const CorrTable t = split_corr(tm, split);
      const auto emit = [&](std::ostream& os) { write_corr_csv(os, t.v, t.rows, t.cols); };
      write_file(rc.dir / ("corr.s" + std::to_string(seed) + "." + split.label + ".csv"), emit);
      if (first) {
        write_file(rc.dir / "corr.csv", emit);
        first = false;
      }
      if (needs_discriminator(strategy)) ensure_discriminator(rc.cfg, tm, split, seed);
      for (const auto& target : split.targets)
        rc.rows.push_back(
            evaluate_target(rc.cfg, tm, split, target, strategy, AdaptMode::None, AdaptScope::Clf, seed).row);
    }
  }
}

void cmd_bound(RunContext& rc) {
  const Quadrant src_q = parse_quadrant(rc.cfg.str("bound.source"));
  const Quadrant tgt_q = parse_quadrant(rc.cfg.str("bound.target"));
  for (const auto seed : rc.seeds()) {
    const BoundSection sec = bound_section(src_q, tgt_q, rc.cfg.integer("data.n_train"), seed,
                                           rc.cfg.integer("bound.n_mc"));
    const BoundReport& rep = sec.report;
    const std::string suffix = seed == rc.seeds().front() ? "" : ".s" + std::to_string(seed);
    write_file(rc.dir / ("bound" + suffix + ".csv"), [&](std::ostream& os) { write_bound_csv(os, rep); });
    write_file(rc.dir / ("bound" + suffix + ".txt"), [&](std::ostream& os) { write_bound_text(os, rep); });
    write_bound_text(rc.log, rep);
    MetricsRow r;
    r.experiment = rc.cfg.str("run.experiment");
    r.dataset = "counterexample";
    r.target = quadrant_name(tgt_q);
    r.method = "threshold_erm";
    r.strategy = "none";
    r.seed = seed;
    r.split = "source_" + quadrant_name(src_q);
    r.accuracy = 1.0 - rep.eps_target.value;
    if (rc.cfg.flag("run.wall_clock")) r.wall_clock = sec.seconds;
    rc.rows.push_back(r);
  }
}

}  // namespace

int run_experiment(const RunConfig& cfg, std::ostream& log) {
  try {
    if (cfg.command == "repro") {
      ReproOptions opt;
      opt.out_dir = experiment_dir(cfg);
      opt.record_wall_clock = cfg.flag("run.wall_clock");
      const ReproResult res = run_repro(opt, log);
      write_text(opt.out_dir / "config.resolved", cfg.resolved());
      log << "wrote " << (opt.out_dir / "metrics.csv").string() << " (" << res.rows.size() << " rows)\n";
      return 0;
    }
    RunContext rc{cfg, experiment_dir(cfg), log, {}, false};
    std::filesystem::create_directories(rc.dir);
    write_text(rc.dir / "config.resolved", cfg.resolved());
    const std::string& c = cfg.command;
    if (c == "gen-data") {
      cmd_gen_data(rc);
      return 0;
    }
    if (c == "train") cmd_train(rc);
    else if (c == "eval") cmd_eval(rc, false);
    else if (c == "adapt") cmd_eval(rc, true);
    else if (c == "bound") cmd_bound(rc);
    else if (c == "sweep-gamma") cmd_sweep_gamma(rc);
    else if (c == "compare-select") cmd_compare_select(rc);
    else if (c == "corr-matrix") cmd_corr_matrix(rc);
    else throw ConfigError("unknown command '" + c + "'");
    rc.write_metrics();
    for (const auto& r : rc.rows)
      log << r.target << ' ' << r.method << ' ' << r.strategy << " gamma=" << format_real(r.gamma) << " seed=" << r.seed
          << " acc=" << format_real(r.accuracy) << '\n';
    return 0;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return exit_code(ErrorKind::Io);
  }
}

}  // namespace drmlab
