#include "drmlab/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace drmlab {

void ModelConfig::validate() const {
  if (input_dim < 1 || feature_dim < 1 || num_classes < 1 || num_heads < 1)
    throw ArgumentError("model config: dimensions and head count must be >= 1");
  for (auto h : hidden_dims)
    if (h < 1) throw ArgumentError("model config: hidden dims must be >= 1");
}

Parameters Parameters::zeros_like() const {
  Parameters z;
  for (const auto& layer : encoder)
    z.encoder.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                         RowVector::Zero(layer.bias.size())});
  for (const auto& head : heads)
    z.heads.push_back({Matrix::Zero(head.weight.rows(), head.weight.cols()),
                       RowVector::Zero(head.bias.size())});
  return z;
}

Index Parameters::count() const {
  Index n = 0;
  for_each([&](const std::string&, Eigen::Map<const Vector> v) { n += v.size(); });
  return n;
}

bool Parameters::operator==(const Parameters& other) const {
  auto same = [](const std::vector<Dense>& a, const std::vector<Dense>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols() ||
          a[i].bias.size() != b[i].bias.size())
        return false;
      if (!(a[i].weight.array() == b[i].weight.array()).all() ||
          !(a[i].bias.array() == b[i].bias.array()).all())
        return false;
    }
    return true;
  };
  return same(encoder, other.encoder) && same(heads, other.heads);
}

void MultiHeadModel::reset_optimizer() {
  adam_m = params.zeros_like();
  adam_v = params.zeros_like();
  step = 0;
}

namespace {

Dense glorot(Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Dense d{Matrix(fan_in, fan_out), RowVector::Zero(fan_out)};
  for (Index i = 0; i < fan_in; ++i)
    for (Index j = 0; j < fan_out; ++j) d.weight(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
  return d;
}

}  // namespace

MultiHeadModel model_init(const ModelConfig& config) {
  config.validate();
  Rng rng = rng_create(config.init_seed);
  MultiHeadModel m;
  m.config = config;
  Index fan_in = config.input_dim;
  for (auto h : config.hidden_dims) {
    m.params.encoder.push_back(glorot(fan_in, h, rng));
    fan_in = h;
  }
  m.params.encoder.push_back(glorot(fan_in, config.feature_dim, rng));
  for (int k = 0; k < config.total_heads(); ++k)
    m.params.heads.push_back(glorot(config.feature_dim, config.num_classes, rng));
  m.reset_optimizer();
  return m;
}

Matrix encode(const MultiHeadModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.config.input_dim)
    throw ArgumentError("encode: input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                        std::to_string(model.config.input_dim));
  Matrix a = inputs;
  for (const auto& layer : model.params.encoder) {
    Matrix z = a * layer.weight;
    z.rowwise() += layer.bias;
    a = z.cwiseMax(0.0);
  }
  return a;
}

ForwardRecord forward(const MultiHeadModel& model, const Matrix& inputs, std::span<const int> heads) {
  if (inputs.cols() != model.config.input_dim)
    throw ArgumentError("forward: input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                        std::to_string(model.config.input_dim));
  ForwardRecord rec;
  rec.activations.push_back(inputs);
  for (const auto& layer : model.params.encoder) {
    Matrix z = rec.activations.back() * layer.weight;
    z.rowwise() += layer.bias;
    rec.activations.push_back(z.cwiseMax(0.0));
    rec.preactivations.push_back(std::move(z));
  }
  if (heads.empty()) {
    for (int k = 0; k < model.head_count(); ++k) rec.heads.push_back(k);
  } else {
    rec.heads.assign(heads.begin(), heads.end());
  }
  for (int k : rec.heads) {
    if (k < 0 || k >= model.head_count()) throw ArgumentError("forward: head index out of range");
    const auto& h = model.params.heads[static_cast<std::size_t>(k)];
    Matrix logits = rec.features() * h.weight;
    logits.rowwise() += h.bias;
    rec.logits.push_back(std::move(logits));
  }
  return rec;
}

Vector per_sample_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw ArgumentError("cross_entropy: label count differs from batch size");
  Vector out(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw ArgumentError("cross_entropy: label out of range");
    out(i) = logsumexp(logits.row(i)) - logits(i, y);
  }
  return out;
}

LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels,
                          std::optional<std::span<const double>> sample_weights) {
  const Index n = logits.rows();
  const Vector losses = per_sample_cross_entropy(logits, labels);
  Vector w = Vector::Ones(n);
  if (sample_weights) {
    if (static_cast<Index>(sample_weights->size()) != n)
      throw ArgumentError("cross_entropy: weight count differs from batch size");
    w = Eigen::Map<const Vector>(sample_weights->data(), n);
    if ((w.array() < 0.0).any()) throw ArgumentError("cross_entropy: negative sample weight");
    const double s = w.sum();
    if (s > 0.0) w *= static_cast<double>(n) / s;
  }
  LossAndGrad out;
  out.loss = n > 0 ? w.dot(losses) / static_cast<double>(n) : 0.0;
  out.dlogits = softmax_rows(logits);
  for (Index i = 0; i < n; ++i) {
    out.dlogits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    out.dlogits.row(i) *= w(i) / static_cast<double>(n);
  }
  return out;
}

Parameters backward(const MultiHeadModel& model, const ForwardRecord& record,
                    std::span<const Matrix> per_head_dlogits, const std::vector<bool>& head_mask) {
  if (per_head_dlogits.size() != record.logits.size())
    throw ArgumentError("backward: dlogits count differs from forward record");
  Parameters g = model.params.zeros_like();
  const Matrix& features = record.features();
  Matrix dfeat = Matrix::Zero(features.rows(), features.cols());
  for (std::size_t j = 0; j < record.heads.size(); ++j) {
    if (!head_mask.empty() && !head_mask[j]) continue;
    const Matrix& d = per_head_dlogits[j];
    if (d.rows() != features.rows() || d.cols() != record.logits[j].cols())
      throw ArgumentError("backward: dlogits shape mismatch");
    const int k = record.heads[j];
    auto& gh = g.heads[static_cast<std::size_t>(k)];
    gh.weight.noalias() += features.transpose() * d;
    gh.bias += d.colwise().sum();
    dfeat.noalias() += d * model.params.heads[static_cast<std::size_t>(k)].weight.transpose();
  }
  Matrix delta = std::move(dfeat);
  for (std::size_t l = model.params.encoder.size(); l-- > 0;) {
    delta = delta.cwiseProduct((record.preactivations[l].array() > 0.0).cast<double>().matrix());
    g.encoder[l].weight.noalias() = record.activations[l].transpose() * delta;
    g.encoder[l].bias = delta.colwise().sum();
    if (l > 0) delta = delta * model.params.encoder[l].weight.transpose();
  }
  return g;
}

void adam_step(MultiHeadModel& model, const Parameters& grads, const AdamOptions& opt) {
  grads.for_each([](const std::string& name, Eigen::Map<const Vector> v) {
    if (!v.allFinite()) throw NumericError("adam_step: non-finite gradient in " + name);
  });
  model.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(model.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(model.step));
  std::vector<Eigen::Map<Vector>> p, m, v;
  std::vector<Eigen::Map<const Vector>> g;
  std::vector<bool> is_encoder;
  model.params.for_each([&](const std::string& name, Eigen::Map<Vector> x) {
    p.push_back(x);
    is_encoder.push_back(name.rfind("encoder.", 0) == 0);
  });
  model.adam_m.for_each([&](const std::string&, Eigen::Map<Vector> x) { m.push_back(x); });
  model.adam_v.for_each([&](const std::string&, Eigen::Map<Vector> x) { v.push_back(x); });
  grads.for_each([&](const std::string&, Eigen::Map<const Vector> x) { g.push_back(x); });
  if (g.size() != p.size()) throw ArgumentError("adam_step: gradient layout differs from model");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (is_encoder[i] && !opt.update_encoder) continue;
    if (g[i].size() != p[i].size()) throw ArgumentError("adam_step: gradient shape mismatch");
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i].cwiseAbs2();
    p[i].array() -= opt.lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + opt.eps);
  }
}

std::pair<double, Parameters> mean_head_loss(const MultiHeadModel& model, const Matrix& inputs,
                                             std::span<const int> labels) {
  const ForwardRecord rec = forward(model, inputs);
  const double scale = 1.0 / static_cast<double>(rec.logits.size());
  double loss = 0.0;
  std::vector<Matrix> d;
  for (const auto& logits : rec.logits) {
    auto lg = cross_entropy(logits, labels);
    loss += scale * lg.loss;
    d.push_back(scale * lg.dlogits);
  }
  return {loss, backward(model, rec, d)};
}

namespace {

std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> relu_pattern(const MultiHeadModel& m,
                                                                            const Matrix& inputs) {
  const ForwardRecord rec = forward(m, inputs);
  std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> out;
  for (const auto& z : rec.preactivations) out.emplace_back(z.array() > 0.0);
  return out;
}

double min_abs_preactivation_change(const ForwardRecord& base, const ForwardRecord& moved) {
  double tightest = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < base.preactivations.size(); ++l) {
    const auto& a = base.preactivations[l];
    const auto& b = moved.preactivations[l];
    for (Index i = 0; i < a.size(); ++i)
      if (a.data()[i] != b.data()[i]) tightest = std::min(tightest, std::abs(a.data()[i]));
  }
  return tightest;
}

}  // namespace

GradCheckResult grad_check(const MultiHeadModel& model, const Matrix& inputs,
                           std::span<const int> labels, double fd_eps, Index min_coords,
                           std::uint64_t seed) {
  if (inputs.rows() == 0) throw ArgumentError("grad_check: empty batch");
  constexpr double kKink = 1e-6;
  const auto [loss0, analytic] = mean_head_loss(model, inputs, labels);
  (void)loss0;
  std::vector<double> flat_grad;
  analytic.for_each([&](const std::string&, Eigen::Map<const Vector> v) {
    flat_grad.insert(flat_grad.end(), v.data(), v.data() + v.size());
  });
  const auto total = static_cast<Index>(flat_grad.size());
  Rng rng = rng_create(seed);
  std::vector<Index> coords;
  if (total <= min_coords) {
    for (Index i = 0; i < total; ++i) coords.push_back(i);
  } else {
    auto perm = permutation(rng, total);
    coords.assign(perm.begin(), perm.begin() + min_coords);
    std::sort(coords.begin(), coords.end());
  }
  const ForwardRecord base = forward(model, inputs);
  const auto base_pattern = relu_pattern(model, inputs);
  GradCheckResult res;
  MultiHeadModel work = model;
  for (Index c : coords) {
    // Locate the coordinate inside the parameter arrays.
    double* slot = nullptr;
    Index offset = c;
    work.params.for_each([&](const std::string&, Eigen::Map<Vector> v) {
      if (slot == nullptr && offset < v.size()) slot = v.data() + offset;
      else if (slot == nullptr) offset -= v.size();
    });
    const double saved = *slot;
    *slot = saved + fd_eps;
    const double lp = mean_head_loss(work, inputs, labels).first;
    const auto pattern_p = relu_pattern(work, inputs);
    const ForwardRecord moved = forward(work, inputs);
    *slot = saved - fd_eps;
    const double lm = mean_head_loss(work, inputs, labels).first;
    const auto pattern_m = relu_pattern(work, inputs);
    *slot = saved;
    bool kink = min_abs_preactivation_change(base, moved) < kKink;
    for (std::size_t l = 0; l < base_pattern.size() && !kink; ++l)
      kink = !(pattern_p[l] == base_pattern[l]).all() || !(pattern_m[l] == base_pattern[l]).all();
    if (kink) {
      ++res.skipped;
      continue;
    }
    const double fd = (lp - lm) / (2.0 * fd_eps);
    const double a = flat_grad[static_cast<std::size_t>(c)];
    const double rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-8});
    res.max_relative_error = std::max(res.max_relative_error, rel);
    ++res.checked;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint layout (text, one token stream):
//   DRMLAB1
//   config <input_dim> <feature_dim> <num_classes> <num_heads> <extra_global_head> <init_seed> <n_hidden> <h...>
//   step <n>
//   array <name> <rows> <cols>  followed by rows*cols hex-float values, row-major
//   end

namespace {

void write_array(std::ostringstream& os, const std::string& name, const double* data, Index rows, Index cols) {
  os << "array " << name << ' ' << rows << ' ' << cols << '\n';
  char buf[64];
  for (Index i = 0; i < rows * cols; ++i) {
    std::snprintf(buf, sizeof buf, "%a", data[i]);
    os << buf << ((i + 1) % cols == 0 ? '\n' : ' ');
  }
}

}  // namespace

std::string checkpoint_string(const MultiHeadModel& model) {
  std::ostringstream os;
  const auto& c = model.config;
  os << "DRMLAB1\n";
  os << "config " << c.input_dim << ' ' << c.feature_dim << ' ' << c.num_classes << ' ' << c.num_heads << ' '
     << (c.extra_global_head ? 1 : 0) << ' ' << c.init_seed << ' ' << c.hidden_dims.size();
  for (auto h : c.hidden_dims) os << ' ' << h;
  os << "\nstep " << model.step << '\n';
  auto dump = [&](const std::vector<Dense>& layers, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& L = layers[i];
      write_array(os, prefix + std::to_string(i) + ".weight", L.weight.data(), L.weight.rows(), L.weight.cols());
      write_array(os, prefix + std::to_string(i) + ".bias", L.bias.data(), 1, L.bias.size());
    }
  };
  dump(model.params.encoder, "encoder.");
  dump(model.params.heads, "head.");
  dump(model.adam_m.encoder, "adam_m.encoder.");
  dump(model.adam_m.heads, "adam_m.head.");
  dump(model.adam_v.encoder, "adam_v.encoder.");
  dump(model.adam_v.heads, "adam_v.head.");
  os << "end\n";
  return os.str();
}

MultiHeadModel parse_checkpoint(const std::string& text) {
  std::istringstream is(text);
  std::string tok;
  if (!(is >> tok) || tok != "DRMLAB1") throw FormatError("checkpoint: missing DRMLAB1 magic");
  ModelConfig c;
  std::size_t n_hidden = 0;
  int extra = 0;
  if (!(is >> tok) || tok != "config") throw FormatError("checkpoint: missing config line");
  if (!(is >> c.input_dim >> c.feature_dim >> c.num_classes >> c.num_heads >> extra >> c.init_seed >> n_hidden))
    throw FormatError("checkpoint: malformed config line");
  c.extra_global_head = extra != 0;
  c.hidden_dims.resize(n_hidden);
  for (auto& h : c.hidden_dims)
    if (!(is >> h)) throw FormatError("checkpoint: malformed hidden dims");
  MultiHeadModel m = model_init(c);
  if (!(is >> tok) || tok != "step" || !(is >> m.step)) throw FormatError("checkpoint: missing step");
  const auto read = [&](const std::string& prefix) {
    return [&is, &tok, prefix](const std::string& short_name, Eigen::Map<Vector> v) {
      const std::string name = prefix + short_name;
      std::string kw, got;
      Index rows = 0, cols = 0;
      if (!(is >> kw >> got >> rows >> cols) || kw != "array" || got != name || rows * cols != v.size())
        throw FormatError("checkpoint: expected array " + name);
      for (Index i = 0; i < v.size(); ++i) {
        if (!(is >> tok)) throw FormatError("checkpoint: truncated array " + name);
        v(i) = std::strtod(tok.c_str(), nullptr);
      }
    };
  };
  m.params.for_each(read(""));
  m.adam_m.for_each(read("adam_m."));
  m.adam_v.for_each(read("adam_v."));
  if (!(is >> tok) || tok != "end") throw FormatError("checkpoint: missing end marker");
  return m;
}

void save_checkpoint(const MultiHeadModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_string(model);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

MultiHeadModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace drmlab
