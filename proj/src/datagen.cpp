#include "drmlab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace drmlab {

void validate(const DomainDataset& d) {
  if (static_cast<Index>(d.labels.size()) != d.inputs.rows())
    throw ArgumentError("dataset '" + d.name + "': label count differs from row count");
  for (int y : d.labels)
    if (y < 0 || y >= d.num_classes)
      throw ArgumentError("dataset '" + d.name + "': label out of range");
}

void validate_consistent(std::span<const DomainDataset> domains) {
  if (domains.empty()) throw ArgumentError("empty domain list");
  for (const auto& d : domains) {
    validate(d);
    if (d.dim() != domains.front().dim() || d.num_classes != domains.front().num_classes)
      throw ArgumentError("domain '" + d.name + "' disagrees on dimension or class count");
  }
}

DomainDataset subset(const DomainDataset& d, std::span<const Index> rows) {
  DomainDataset out;
  out.domain_id = d.domain_id;
  out.name = d.name;
  out.num_classes = d.num_classes;
  out.generator_params = d.generator_params;
  out.inputs.resize(static_cast<Index>(rows.size()), d.dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Index>(i)) = d.inputs.row(rows[i]);
    out.labels.push_back(d.labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

DomainDataset pool(std::span<const DomainDataset> domains, int domain_id) {
  validate_consistent(domains);
  Index n = 0;
  for (const auto& d : domains) n += d.size();
  DomainDataset out;
  out.domain_id = domain_id;
  out.name = "pooled";
  out.num_classes = domains.front().num_classes;
  out.inputs.resize(n, domains.front().dim());
  Index row = 0;
  for (const auto& d : domains) {
    out.inputs.middleRows(row, d.size()) = d.inputs;
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
    row += d.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

Vector quadrant_mean(Quadrant q) {
  switch (q) {
    case Quadrant::o: return Vector{{-3.0, 3.0}};
    case Quadrant::g: return Vector{{3.0, 3.0}};
    case Quadrant::r: return Vector{{-3.0, -3.0}};
    case Quadrant::b: return Vector{{3.0, -3.0}};
  }
  return {};
}

ThresholdRule quadrant_rule(Quadrant q) {
  if (q == Quadrant::o || q == Quadrant::r) return {0, -3.0, true};
  return {0, 3.0, false};
}

std::string quadrant_name(Quadrant q) {
  static const char* names[] = {"o", "g", "r", "b"};
  return names[static_cast<int>(q)];
}

DomainDataset gen_quadrant(Quadrant q, Index n, Rng& rng) {
  if (n < 1) throw ArgumentError("gen_quadrant: n must be >= 1");
  DomainDataset d;
  d.domain_id = static_cast<int>(q);
  d.name = quadrant_name(q);
  d.num_classes = 2;
  d.inputs = gaussian_sample(rng, quadrant_mean(q), n);
  const ThresholdRule rule = quadrant_rule(q);
  d.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d.labels[static_cast<std::size_t>(i)] = rule(d.inputs.row(i));
  d.generator_params = GeneratorParams{{quadrant_mean(q)}, {1.0}, rule, std::nullopt, 0.0};
  return d;
}

std::vector<DomainDataset> gen_four_gaussians(Index n_per_domain, std::uint64_t seed) {
  Rng root = rng_create(seed);
  std::vector<DomainDataset> out;
  for (Quadrant q : {Quadrant::o, Quadrant::g, Quadrant::r, Quadrant::b}) {
    Rng child = root.split();
    out.push_back(gen_quadrant(q, n_per_domain, child));
  }
  return out;
}

DomainDataset apply_invariant_transform(const DomainDataset& d) {
  if (d.dim() != 2) throw ArgumentError("apply_invariant_transform: inputs must be 2-dimensional");
  DomainDataset out = d;
  for (Index i = 0; i < out.size(); ++i) {
    const double x1 = out.inputs(i, 0);
    out.inputs(i, 0) = (x1 < 0.0 ? x1 + 3.0 : 0.0) + (x1 > 0.0 ? x1 - 3.0 : 0.0);
  }
  out.generator_params.reset();
  return out;
}

void inject_label_noise(DomainDataset& d, double p, Rng& rng) {
  for (auto& y : d.labels)
    if (rng.uniform() < p) y = d.num_classes == 2 ? 1 - y : static_cast<int>(rng.below(static_cast<std::uint32_t>(d.num_classes)));
}

// ---------------------------------------------------------------------------

DomainDataset gen_colored_synthetic(Index n, double p_d, double label_noise, std::uint64_t seed) {
  if (p_d < 0.0 || p_d > 1.0) throw ArgumentError("gen_colored_synthetic: p_d must lie in [0,1]");
  if (label_noise < 0.0 || label_noise >= 0.5)
    throw ArgumentError("gen_colored_synthetic: label_noise must lie in [0,0.5)");
  if (n < 1) throw ArgumentError("gen_colored_synthetic: n must be >= 1");
  Rng rng = rng_create(seed);
  DomainDataset d;
  d.name = "colored";
  d.num_classes = 2;
  d.inputs.resize(n, 2);
  d.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    // Fixed six uniforms per sample keeps the stream aligned across p_d.
    const int u = rng.uniform() < 0.5 ? 1 : 0;
    const int y = rng.uniform() < label_noise ? 1 - u : u;
    const int z = rng.uniform() < p_d ? 1 - y : y;
    d.inputs(i, 0) = u + kColorJitter * rng.normal();
    d.inputs(i, 1) = z + kColorJitter * rng.normal();
    d.labels[static_cast<std::size_t>(i)] = y;
  }
  GeneratorParams params;
  params.spurious_flip = p_d;
  params.label_noise = label_noise;
  d.generator_params = params;
  return d;
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24u) | (std::uint32_t{b[at + 1]} << 16u) |
         (std::uint32_t{b[at + 2]} << 8u) | std::uint32_t{b[at + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24u));
  out.push_back(static_cast<std::uint8_t>(v >> 16u));
  out.push_back(static_cast<std::uint8_t>(v >> 8u));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

RawIdx parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("idx: file shorter than the magic word");
  RawIdx raw;
  raw.magic = read_be32(bytes, 0);
  if (raw.magic != kIdxLabelsMagic && raw.magic != kIdxImagesMagic)
    throw FormatError("idx: unsupported magic word");
  const std::size_t ndims = raw.magic & 0xffu;
  if (bytes.size() < 4 + 4 * ndims) throw FormatError("idx: truncated header");
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    raw.dims.push_back(read_be32(bytes, 4 + 4 * i));
    count *= raw.dims.back();
  }
  const std::size_t offset = 4 + 4 * ndims;
  if (bytes.size() - offset != count)
    throw FormatError("idx: payload length " + std::to_string(bytes.size() - offset) +
                      " does not match declared " + std::to_string(count));
  raw.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  if (raw.magic == kIdxLabelsMagic)
    for (auto v : raw.payload)
      if (v > 9) throw FormatError("idx: label byte exceeds 9");
  return raw;
}

std::vector<std::uint8_t> serialize_idx(const RawIdx& raw) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * raw.dims.size() + raw.payload.size());
  write_be32(out, raw.magic);
  for (auto d : raw.dims) write_be32(out, d);
  out.insert(out.end(), raw.payload.begin(), raw.payload.end());
  return out;
}

RawIdx load_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("idx: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

Matrix rotate_image(const Matrix& image, double angle_deg) {
  const Index h = image.rows(), w = image.cols();
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double a = angle_deg * M_PI / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  auto at = [&](Index r, Index col) {
    return (r < 0 || r >= h || col < 0 || col >= w) ? 0.0 : image(r, col);
  };
  Matrix out(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index col = 0; col < w; ++col) {
      // Inverse map: source = R(-a) (dest - center) + center.
      const double dx = static_cast<double>(col) - cx, dy = static_cast<double>(r) - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
      const double tx = sx - fx, ty = sy - fy;
      out(r, col) = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                    ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
    }
  }
  return out;
}

ImagePool image_pool(const RawIdx& images, const RawIdx& labels, Index limit) {
  if (images.magic != kIdxImagesMagic || images.dims.size() != 3 || images.dims[1] != 28 ||
      images.dims[2] != 28)
    throw FormatError("idx: expected a 28x28 image file");
  if (labels.magic != kIdxLabelsMagic || labels.dims.size() != 1 || labels.dims[0] != images.dims[0])
    throw FormatError("idx: label file does not match image file");
  const Index n = std::min<Index>(limit, images.dims[0]);
  ImagePool p;
  p.pixels.resize(n, 784);
  p.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 784; ++j) p.pixels(i, j) = images.payload[static_cast<std::size_t>(i * 784 + j)];
    p.labels[static_cast<std::size_t>(i)] = labels.payload[static_cast<std::size_t>(i)];
  }
  return p;
}

namespace {

// Orders pool indices so that every contiguous block has close to the pool's
// class proportions: shuffle within each class, then sort by fractional rank.
std::vector<Index> stratified_order(const std::vector<int>& labels, int num_classes, Rng& rng) {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  std::vector<std::pair<double, Index>> keyed;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    const auto perm = permutation(rng, static_cast<Index>(members.size()));
    for (std::size_t k = 0; k < members.size(); ++k)
      keyed.emplace_back((static_cast<double>(k) + 0.5) / static_cast<double>(members.size()),
                         members[static_cast<std::size_t>(perm[k])]);
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Index> out;
  out.reserve(keyed.size());
  for (const auto& kv : keyed) out.push_back(kv.second);
  return out;
}

}  // namespace

std::vector<DomainDataset> build_rotated_domains(const ImagePool& pool,
                                                 std::span<const double> angles,
                                                 Index per_domain, std::uint64_t seed) {
  if (per_domain < 1 || per_domain * static_cast<Index>(angles.size()) > pool.pixels.rows())
    throw ArgumentError("build_rotated_domains: not enough images for the requested domains");
  Rng rng = rng_create(seed);
  const auto order = stratified_order(pool.labels, 10, rng);
  // Contiguous blocks of the stratified order keep the pool's class mix.
  const Index k = static_cast<Index>(angles.size());
  std::vector<DomainDataset> out;
  for (Index d = 0; d < k; ++d) {
    DomainDataset dom;
    dom.domain_id = static_cast<int>(d);
    dom.name = std::to_string(static_cast<int>(angles[static_cast<std::size_t>(d)]));
    dom.num_classes = 10;
    dom.inputs.resize(per_domain, 784);
    for (Index i = 0; i < per_domain; ++i) {
      const Index src = order[static_cast<std::size_t>(d * per_domain + i)];
      Matrix img = Eigen::Map<const Matrix>(pool.pixels.row(src).data(), 28, 28);
      if (angles[static_cast<std::size_t>(d)] != 0.0) img = rotate_image(img, angles[static_cast<std::size_t>(d)]);
      dom.inputs.row(i) = Eigen::Map<const RowVector>(img.data(), 784) / 255.0;
      dom.labels.push_back(pool.labels[static_cast<std::size_t>(src)]);
    }
    out.push_back(std::move(dom));
  }
  return out;
}

std::vector<DomainDataset> build_rotated_clusters(std::span<const double> angles,
                                                  Index per_domain, std::uint64_t seed) {
  constexpr int kClasses = 10;
  constexpr double kRadius = 2.5;
  constexpr int kPlaneMultipliers[] = {1, 3, 7, 9};
  constexpr Index kDim = 8;
  if (per_domain < 1) throw ArgumentError("build_rotated_clusters: per_domain must be >= 1");
  Rng root = rng_create(seed);
  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d < angles.size(); ++d) {
    Rng rng = root.split();
    const double rot = angles[d] * M_PI / 180.0;
    DomainDataset dom;
    dom.domain_id = static_cast<int>(d);
    dom.name = std::to_string(static_cast<int>(angles[d]));
    dom.num_classes = kClasses;
    dom.inputs.resize(per_domain, kDim);
    GeneratorParams params;
    for (int c = 0; c < kClasses; ++c) {
      Vector mean(kDim);
      for (int p = 0; p < 4; ++p) {
        const double phi = 2.0 * M_PI * ((kPlaneMultipliers[p] * c) % kClasses) / kClasses + rot;
        mean(2 * p) = kRadius * std::cos(phi);
        mean(2 * p + 1) = kRadius * std::sin(phi);
      }
      params.means.push_back(mean);
      params.masses.push_back(1.0 / kClasses);
    }
    for (Index i = 0; i < per_domain; ++i) {
      const int c = static_cast<int>(i % kClasses);
      for (Index j = 0; j < kDim; ++j) dom.inputs(i, j) = params.means[static_cast<std::size_t>(c)](j) + rng.normal();
      dom.labels.push_back(c);
    }
    dom.generator_params = std::move(params);
    out.push_back(std::move(dom));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::pair<DomainDataset, DomainDataset> split_train_eval(const DomainDataset& d,
                                                         double train_frac,
                                                         std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw ArgumentError("split_train_eval: train_frac must lie in (0,1)");
  if (d.size() < 2) throw ArgumentError("split_train_eval: need at least 2 samples");
  Rng rng = rng_create(seed);
  const auto perm = permutation(rng, d.size());
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(d.size()) * train_frac));
  const std::span<const Index> all(perm);
  return {subset(d, all.first(n_train)), subset(d, all.subspan(n_train))};
}

}  // namespace drmlab
