#include "drmlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace drmlab {

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys{
      {"run.experiment", KeyType::String, "default", "experiment id; names the output subdirectory"},
      {"run.out", KeyType::String, "runs", "output root directory"},
      {"run.seed", KeyType::Int, "0", "first seed"},
      {"run.num_seeds", KeyType::Int, "1", "number of consecutive seeds"},
      {"run.wall_clock", KeyType::Bool, "false", "record wall-clock seconds (otherwise 0, keeping metrics reproducible)"},

      {"data.task", KeyType::String, "counterexample", "counterexample | colored | rotated"},
      {"data.n_train", KeyType::Int, "2000", "training samples per source domain (synthetic tasks)"},
      {"data.n_eval", KeyType::Int, "2000", "fresh evaluation samples per domain (synthetic tasks)"},
      {"data.sources", KeyType::List, "r,b", "counterexample source domains"},
      {"data.targets", KeyType::List, "o,g", "counterexample target domains"},
      {"data.invariant", KeyType::Bool, "false", "apply the invariant x1 transform to every domain"},
      {"data.label_noise", KeyType::Real, "0", "fraction of flipped training labels in source domains"},
      {"data.p_d", KeyType::List, "0.2,0.1,0.9", "colored task: color flip probability of each domain"},
      {"data.colored_noise", KeyType::Real, "0.25", "colored task: label flip probability"},
      {"data.lodo_targets", KeyType::List, "", "colored task: held-out domain indices (empty = all)"},
      {"data.source_angles", KeyType::List, "15,30,45,60,75", "rotated task: source angles in degrees"},
      {"data.target_angles", KeyType::List, "0", "rotated task: target angles in degrees"},
      {"data.per_domain", KeyType::Int, "1000", "rotated task: samples per domain"},
      {"data.pool_size", KeyType::Int, "10000", "rotated task: digits read from the IDX files"},
      {"data.train_frac", KeyType::Real, "0.8", "rotated task: train share of each domain"},
      {"data.idx_dir", KeyType::String, "", "directory with MNIST IDX files (default $DRMLAB_DATA_DIR)"},
      {"data.require_idx", KeyType::Bool, "false", "fail instead of using the rotated-cluster stand-in"},

      {"model.hidden", KeyType::List, "auto", "hidden widths; auto = 64,64 (or 256,128 for images)"},
      {"model.feature_dim", KeyType::Int, "0", "feature width; 0 = 64 (or 128 for images)"},
      {"model.global_head", KeyType::Bool, "false", "add a head trained on all source samples"},

      {"train.method", KeyType::String, "drm", "drm | erm"},
      {"train.steps", KeyType::Int, "2000", "optimizer steps"},
      {"train.batch", KeyType::Int, "64", "samples per domain per step"},
      {"train.lr", KeyType::Real, "0.001", "Adam learning rate"},
      {"train.reweight", KeyType::String, "none", "none | tau | radius (KL-DRO sample reweighting)"},
      {"train.reweight_value", KeyType::Real, "0", "tau, or the KL radius eta"},
      {"disc.steps", KeyType::Int, "1000", "domain discriminator steps (NNM)"},
      {"disc.lr", KeyType::Real, "0.01", "domain discriminator learning rate"},

      {"select.kind", KeyType::String, "PEM", "PEM | CSM | L2SM | NNM | Uniform"},
      {"select.gamma", KeyType::Real, "inf", "mixing sharpness; 0 = uniform, inf = argmin head"},
      {"select.normalize", KeyType::Bool, "false", "mix softmax probabilities instead of raw logits"},
      {"select.floor", KeyType::Real, "1e-08", "lower clamp of head scores"},

      {"adapt.mode", KeyType::List, "none", "none | vanilla_retrain | drm_retrain | entropy_min (list allowed)"},
      {"adapt.scope", KeyType::List, "clf", "clf | full (list allowed)"},
      {"adapt.batch_size", KeyType::Int, "32", "streaming batch size"},
      {"adapt.lr", KeyType::Real, "0.0001", "adaptation learning rate"},
      {"adapt.steps", KeyType::Int, "1", "updates per streaming batch"},

      {"bound.source", KeyType::String, "r", "source quadrant"},
      {"bound.target", KeyType::String, "o", "target quadrant"},
      {"bound.n_mc", KeyType::Int, "100000", "Monte-Carlo samples per term"},

      {"sweep.gammas", KeyType::List, "0,0.5,1,2,4,8,inf", "gamma axis of sweep-gamma"},
      {"sweep.strategies", KeyType::List, "Uniform,CSM,L2SM,NNM,PEM", "strategy axis of compare-select"},
  };
  return keys;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : config_keys())
    if (k.key == key) return &k;
  return nullptr;
}

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

void check_type(const KeySpec& spec, const std::string& v) {
  switch (spec.type) {
    case KeyType::Int: parse_int(spec.key, v); break;
    case KeyType::Real: parse_real(spec.key, v); break;
    case KeyType::Bool: parse_bool(spec.key, v); break;
    case KeyType::String:
    case KeyType::List: break;
  }
}

const KeySpec& require_key(const std::string& key) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) throw ConfigError("unknown key '" + key + "' (did you mean '" + nearest_key(key) + "'?)");
  return *spec;
}

}  // namespace

std::string nearest_key(const std::string& key) {
  const KeySpec* best = nullptr;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& k : config_keys()) {
    const std::size_t d = edit_distance(key, k.key);
    if (d < best_d) {
      best_d = d;
      best = &k;
    }
  }
  return best ? best->key : "";
}

double parse_real(const std::string& key, const std::string& value) {
  const std::string l = lower(trim(value));
  if (l == "inf" || l == "+inf" || l == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(l, &used);
    if (used == l.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + value + "'");
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec& spec = require_key(key);
  const std::string v = trim(value);
  check_type(spec, v);
  values_[key] = v;
}

std::string RunConfig::str(const std::string& key) const {
  require_key(key);
  return values_.at(key);
}

Index RunConfig::integer(const std::string& key) const { return static_cast<Index>(parse_int(key, str(key))); }

std::uint64_t RunConfig::u64(const std::string& key) const {
  const long long v = parse_int(key, str(key));
  if (v < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::uint64_t>(v);
}

double RunConfig::real(const std::string& key) const { return parse_real(key, str(key)); }

bool RunConfig::flag(const std::string& key) const { return parse_bool(key, str(key)); }

std::vector<std::string> RunConfig::list(const std::string& key) const { return split_list(str(key)); }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : list(key)) out.push_back(parse_real(key, s));
  return out;
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  os << "# command: " << command << '\n';
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& arg) {
  std::string a = arg;
  while (!a.empty() && a.front() == '-') a.erase(a.begin());
  const auto eq = a.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + arg + "' must look like --key=value");
  cfg.set(a.substr(0, eq), a.substr(eq + 1));
}

}  // namespace drmlab
