#pragma once

#include "drmlab/core.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace drmlab {

enum class KeyType { String, Int, Real, Bool, List };

struct KeySpec {
  std::string key;
  KeyType type;
  std::string default_value;
  std::string help;
};

/// Every accepted configuration key with its type and default.
const std::vector<KeySpec>& config_keys();
const KeySpec* find_key(const std::string& key);
/// Closest registered key by edit distance.
std::string nearest_key(const std::string& key);

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"gen-data", "train",         "eval",        "adapt", "bound",
                                          "sweep-gamma", "compare-select", "corr-matrix", "repro"};
  return c;
}

/// Flat key/value run description. Values are kept as validated strings so
/// the resolved file round-trips exactly.
class RunConfig {
 public:
  RunConfig();

  std::string command;

  /// Throws ConfigError for unknown keys (naming the nearest one) and for
  /// values that do not parse as the key's type.
  void set(const std::string& key, const std::string& value);

  std::string str(const std::string& key) const;
  Index integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  /// Accepts "inf" as +infinity.
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  /// Comma-separated list; an empty value is an empty list.
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  /// Sorted "key = value" lines, preceded by the command.
  std::string resolved() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Applies `key = value` lines (`#` starts a comment) on top of cfg.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// `--key=value` overrides (the leading dashes are optional).
void apply_override(RunConfig& cfg, const std::string& arg);

double parse_real(const std::string& key, const std::string& value);

}  // namespace drmlab
