#include "drmlab/bound.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>

namespace drmlab {

namespace {

constexpr double kMinSourceDensity = 1e-300;

Estimate bernoulli_mean(Index hits, Index n) {
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

Estimate sample_mean(const Vector& v) {
  const double n = static_cast<double>(v.size());
  const double m = v.mean();
  const double var = v.size() > 1 ? (v.array() - m).square().sum() / (n - 1.0) : 0.0;
  return {m, std::sqrt(var / n)};
}

Estimate sum_estimates(std::span<const Estimate> parts) {
  Estimate out;
  double var = 0.0;
  for (const auto& e : parts) {
    out.value += e.value;
    var += e.se * e.se;
  }
  out.se = std::sqrt(var);
  return out;
}

void require_mc(Index n_mc, const char* who) {
  if (n_mc < 1000) throw ArgumentError(std::string(who) + ": n_mc must be >= 1000");
}

// Component choices and unit noise shared by any domain of the same dimension.
struct MixtureDraws {
  Vector u;
  Matrix z;
};

MixtureDraws draw_mixture_noise(Index n, Index dim, bool need_u, Rng& rng) {
  MixtureDraws d{Vector::Zero(n), Matrix(n, dim)};
  for (Index i = 0; i < n; ++i) {
    if (need_u) d.u(i) = rng.uniform();
    for (Index j = 0; j < dim; ++j) d.z(i, j) = rng.normal();
  }
  return d;
}

std::size_t pick_component(const std::vector<double>& masses, double u) {
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < masses.size(); ++c) {
    acc += masses[c];
    if (u < acc) return c;
  }
  return masses.size() - 1;
}

Matrix place(const AnalyticDomain& d, const MixtureDraws& draws) {
  Matrix x = draws.z;
  for (Index i = 0; i < x.rows(); ++i)
    x.row(i) += d.means[pick_component(d.masses, draws.u(i))].transpose();
  return x;
}

Estimate disagreement(const Predictor& f, const ThresholdRule& g, const Matrix& x) {
  Index hits = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector row = x.row(i).transpose();
    if (f(row) != g(row)) ++hits;
  }
  return bernoulli_mean(hits, x.rows());
}

Predictor as_predictor(const ThresholdRule& r) {
  return [r](const Vector& x) { return r(x); };
}

}  // namespace

double AnalyticDomain::log_density(const Vector& x) const {
  Vector terms(static_cast<Index>(means.size()));
  const double log_norm = -0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
  for (std::size_t c = 0; c < means.size(); ++c)
    terms(static_cast<Index>(c)) = std::log(masses[c]) + log_norm - 0.5 * (x - means[c]).squaredNorm();
  return logsumexp(terms);
}

Matrix AnalyticDomain::sample(Index n, Rng& rng) const {
  return place(*this, draw_mixture_noise(n, dim(), means.size() > 1, rng));
}

void AnalyticDomain::validate() const {
  if (means.empty() || means.size() != masses.size())
    throw ArgumentError("analytic domain '" + name + "': one mass per component is required");
  double total = 0.0;
  for (std::size_t c = 0; c < means.size(); ++c) {
    if (means[c].size() != means.front().size())
      throw ArgumentError("analytic domain '" + name + "': component dimensions differ");
    if (!(masses[c] > 0.0)) throw ArgumentError("analytic domain '" + name + "': masses must be positive");
    total += masses[c];
  }
  if (std::abs(total - 1.0) > 1e-12) throw ArgumentError("analytic domain '" + name + "': masses must sum to 1");
  if (rule.axis < 0 || rule.axis >= dim()) throw ArgumentError("analytic domain '" + name + "': rule axis out of range");
}

AnalyticDomain analytic_quadrant(Quadrant q) {
  return {quadrant_name(q), {quadrant_mean(q)}, {1.0}, quadrant_rule(q)};
}

double empirical_error(const Predictor& f, const DomainDataset& d) {
  if (d.size() == 0) throw ArgumentError("empirical_error: empty dataset");
  Index wrong = 0;
  for (Index i = 0; i < d.size(); ++i)
    if (f(d.inputs.row(i).transpose()) != d.labels[static_cast<std::size_t>(i)]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(d.size());
}

Estimate adaptivity_gap(const ThresholdRule& f_source, const AnalyticDomain& target, Index n_mc,
                        std::uint64_t seed) {
  return target_error(as_predictor(f_source), target, n_mc, seed);
}

Estimate target_error(const Predictor& f, const AnalyticDomain& target, Index n_mc, std::uint64_t seed) {
  require_mc(n_mc, "target_error");
  target.validate();
  Rng rng = rng_create(seed);
  return disagreement(f, target.rule, target.sample(n_mc, rng));
}

double density_ratio(const Vector& x, const AnalyticDomain& target, const AnalyticDomain& source) {
  const double log_s = source.log_density(x);
  if (log_s < std::log(kMinSourceDensity)) throw NumericError("density_ratio: source density underflows at x");
  return std::exp(target.log_density(x) - log_s);
}

Eq5Result rhs_eq5(const Predictor& f, std::span<const AnalyticDomain> sources, const AnalyticDomain& target,
                  const Vector& alpha, Index n_mc, std::uint64_t seed) {
  require_mc(n_mc, "rhs_eq5");
  if (sources.empty() || static_cast<Index>(sources.size()) != alpha.size())
    throw ArgumentError("rhs_eq5: one alpha per source is required");
  if ((alpha.array() < 0.0).any() || std::abs(alpha.sum() - 1.0) > 1e-9)
    throw ArgumentError("rhs_eq5: alpha must lie on the simplex");
  target.validate();

  Rng root = rng_create(seed);
  Eq5Result out;
  Index clamped = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const AnalyticDomain& src = sources[i];
    src.validate();
    Rng source_rng = root.split();
    Rng gap_rng = root.split();
    const double a = alpha(static_cast<Index>(i));
    const Matrix x = src.sample(n_mc, source_rng);
    Vector contrib(n_mc);
    for (Index s = 0; s < n_mc; ++s) {
      const Vector row = x.row(s).transpose();
      double r = density_ratio(row, target, src);
      if (r > kRatioCap) {
        r = kRatioCap;
        ++clamped;
      }
      contrib(s) = f(row) != src.rule(row) ? a * r : 0.0;
    }
    out.weighted_source.push_back(sample_mean(contrib));
    const Estimate g = disagreement(as_predictor(src.rule), target.rule, target.sample(n_mc, gap_rng));
    out.gap.push_back({a * g.value, a * g.se});
  }
  std::vector<Estimate> parts = out.weighted_source;
  parts.insert(parts.end(), out.gap.begin(), out.gap.end());
  out.total = sum_estimates(parts);
  out.clamp_fraction = static_cast<double>(clamped) / static_cast<double>(n_mc * static_cast<Index>(sources.size()));
  return out;
}

Estimate h_divergence(const Matrix& samples_a, const Matrix& samples_b, const ThresholdGrid& grid) {
  if (samples_a.rows() == 0 || samples_b.rows() == 0) throw ArgumentError("h_divergence: empty sample");
  if (samples_a.cols() != samples_b.cols()) throw ArgumentError("h_divergence: dimension mismatch");
  if (grid.points < 2) throw ArgumentError("h_divergence: grid needs at least two points");
  const double na = static_cast<double>(samples_a.rows());
  const double nb = static_cast<double>(samples_b.rows());
  double best = -1.0, pa_best = 0.0, pb_best = 0.0;
  for (Index j = 0; j < samples_a.cols(); ++j) {
    std::vector<double> a(samples_a.col(j).begin(), samples_a.col(j).end());
    std::vector<double> b(samples_b.col(j).begin(), samples_b.col(j).end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (Index k = 0; k < grid.points; ++k) {
      const double t = grid.at(k);
      // P(x_j > t); the flipped orientation gives 1 - p and the same |difference|.
      const double pa = static_cast<double>(a.end() - std::upper_bound(a.begin(), a.end(), t)) / na;
      const double pb = static_cast<double>(b.end() - std::upper_bound(b.begin(), b.end(), t)) / nb;
      for (int orient = 0; orient < 2; ++orient) {
        const double qa = orient == 0 ? pa : 1.0 - pa;
        const double qb = orient == 0 ? pb : 1.0 - pb;
        if (std::abs(qa - qb) > best) {
          best = std::abs(qa - qb);
          pa_best = qa;
          pb_best = qb;
        }
      }
    }
  }
  return {2.0 * best, 2.0 * std::sqrt(pa_best * (1.0 - pa_best) / na + pb_best * (1.0 - pb_best) / nb)};
}

Estimate h_divergence(const AnalyticDomain& a, const AnalyticDomain& b, Index n_mc, std::uint64_t seed,
                      const ThresholdGrid& grid) {
  require_mc(n_mc, "h_divergence");
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) throw ArgumentError("h_divergence: dimension mismatch");
  Rng rng = rng_create(seed);
  const MixtureDraws draws = draw_mixture_noise(n_mc, a.dim(), true, rng);
  return h_divergence(place(a, draws), place(b, draws), grid);
}

PriorResult rhs_prior(const Predictor& f, const AnalyticDomain& source, const AnalyticDomain& target, Index n_mc,
                      std::uint64_t seed, const ThresholdGrid& grid) {
  require_mc(n_mc, "rhs_prior");
  Rng root = rng_create(seed);
  Rng s_rng = root.split();
  Rng t_rng = root.split();
  const std::uint64_t dh_seed = root.next_u64();
  const Matrix xs = source.sample(n_mc, s_rng);
  const Matrix xt = target.sample(n_mc, t_rng);

  PriorResult out;
  out.source_error = disagreement(f, source.rule, xs);
  out.d_h = h_divergence(source, target, n_mc, dh_seed, grid);
  const Estimate on_s = disagreement(as_predictor(source.rule), target.rule, xs);
  const Estimate on_t = disagreement(as_predictor(source.rule), target.rule, xt);
  out.min_term = on_t.value < on_s.value ? on_t : on_s;
  const Estimate parts[] = {out.source_error, out.d_h, out.min_term};
  out.total = sum_estimates(parts);
  return out;
}

BoundReport tightness_report(const TightnessConfig& cfg) {
  if (!cfg.f) throw ArgumentError("tightness_report: no hypothesis");
  Rng root = rng_create(cfg.seed);
  const std::uint64_t eps_seed = root.next_u64();
  const std::uint64_t eq5_seed = root.next_u64();

  BoundReport r;
  r.n_mc = cfg.n_mc;
  r.eps_target = target_error(cfg.f, cfg.target, cfg.n_mc, eps_seed);
  const Eq5Result eq5 = rhs_eq5(cfg.f, cfg.sources, cfg.target, cfg.alpha, cfg.n_mc, eq5_seed);
  r.weighted_source = eq5.weighted_source;
  r.gap = eq5.gap;
  r.rhs_eq5 = eq5.total;
  r.clamp_fraction = eq5.clamp_fraction;

  double prior = 0.0, prior_var = 0.0, dh = 0.0, dh_var = 0.0;
  for (std::size_t i = 0; i < cfg.sources.size(); ++i) {
    const double a = cfg.alpha(static_cast<Index>(i));
    const PriorResult p = rhs_prior(cfg.f, cfg.sources[i], cfg.target, cfg.n_mc, root.next_u64());
    prior += a * p.total.value;
    prior_var += a * a * p.total.se * p.total.se;
    dh += a * p.d_h.value;
    dh_var += a * a * p.d_h.se * p.d_h.se;
  }
  r.rhs_prior = {prior, std::sqrt(prior_var)};
  r.d_h = {dh, std::sqrt(dh_var)};

  const double se_valid = std::hypot(r.eps_target.se, r.rhs_eq5.se);
  const double se_tight = std::hypot(r.rhs_eq5.se, r.rhs_prior.se);
  r.valid = r.eps_target.value <= r.rhs_eq5.value + 3.0 * se_valid;
  r.tight = r.rhs_eq5.value <= r.rhs_prior.value + 3.0 * se_tight;
  if (!std::isfinite(r.rhs_eq5.value) || !std::isfinite(r.rhs_prior.value))
    throw NumericError("tightness_report: non-finite bound");
  return r;
}

void write_bound_csv(std::ostream& os, const BoundReport& r) {
  os << "term,index,value,se\n" << std::setprecision(17);
  os << "eps_target,," << r.eps_target.value << ',' << r.eps_target.se << '\n';
  for (std::size_t i = 0; i < r.weighted_source.size(); ++i)
    os << "weighted_source," << i << ',' << r.weighted_source[i].value << ',' << r.weighted_source[i].se << '\n';
  for (std::size_t i = 0; i < r.gap.size(); ++i)
    os << "gap," << i << ',' << r.gap[i].value << ',' << r.gap[i].se << '\n';
  os << "rhs_eq5,," << r.rhs_eq5.value << ',' << r.rhs_eq5.se << '\n';
  os << "rhs_prior,," << r.rhs_prior.value << ',' << r.rhs_prior.se << '\n';
  os << "d_h,," << r.d_h.value << ',' << r.d_h.se << '\n';
  os << "clamp_fraction,," << r.clamp_fraction << ",0\n";
  os << "n_mc,," << r.n_mc << ",0\n";
  os << "valid,," << (r.valid ? 1 : 0) << ",0\n";
  os << "tight,," << (r.tight ? 1 : 0) << ",0\n";
}

void write_bound_text(std::ostream& os, const BoundReport& r) {
  const auto pm = [&](const char* label, const Estimate& e) {
    os << "  " << std::left << std::setw(22) << label << std::fixed << std::setprecision(6) << e.value << " +- "
       << e.se << '\n';
  };
  os << "bound report (n_mc = " << r.n_mc << ")\n";
  pm("target error", r.eps_target);
  for (std::size_t i = 0; i < r.weighted_source.size(); ++i) {
    const std::string k = std::to_string(i);
    pm(("source term " + k).c_str(), r.weighted_source[i]);
    pm(("gap term " + k).c_str(), r.gap[i]);
  }
  pm("rhs adaptivity bound", r.rhs_eq5);
  pm("rhs prior bound", r.rhs_prior);
  pm("h-divergence", r.d_h);
  os << "  clamp fraction        " << r.clamp_fraction << '\n';
  os << "  valid                 " << (r.valid ? "yes" : "no") << '\n';
  os << "  tighter than prior    " << (r.tight ? "yes" : "no") << '\n';
  os.unsetf(std::ios::fixed);
}

namespace {

template <typename ErrorFn>
SharedThresholdSweep best_threshold(Index dim, const ThresholdGrid& grid, ErrorFn error) {
  if (grid.points < 2) throw ArgumentError("threshold sweep: grid needs at least two points");
  SharedThresholdSweep best{{}, std::numeric_limits<double>::infinity()};
  for (Index j = 0; j < dim; ++j)
    for (Index k = 0; k < grid.points; ++k)
      for (bool above : {true, false}) {
        const ThresholdRule rule{j, grid.at(k), above};
        const double e = error(rule);
        if (e < best.summed_error) best = {rule, e};
      }
  return best;
}

double rule_error(const ThresholdRule& rule, const DomainDataset& d) {
  Index wrong = 0;
  for (Index i = 0; i < d.size(); ++i)
    if (rule(d.inputs.row(i)) != d.labels[static_cast<std::size_t>(i)]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(d.size());
}

}  // namespace

ThresholdRule fit_threshold(const DomainDataset& d, const ThresholdGrid& grid) {
  if (d.size() == 0) throw ArgumentError("fit_threshold: empty dataset");
  return best_threshold(d.dim(), grid, [&](const ThresholdRule& r) { return rule_error(r, d); }).best;
}

SharedThresholdSweep sweep_shared_threshold(std::span<const DomainDataset> domains, const ThresholdGrid& grid) {
  validate_consistent(domains);
  return best_threshold(domains.front().dim(), grid, [&](const ThresholdRule& r) {
    double e = 0.0;
    for (const auto& d : domains) e += rule_error(r, d);
    return e;
  });
}

}  // namespace drmlab
