#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dtg/dataset.hpp"

namespace dtg {

// Flat `key = value` text. Blank lines and lines starting with '#' are
// skipped; later assignments override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void merge(const KeyValueConfig& other);
  bool has(const std::string& key) const { return values_.contains(key); }

  // Throws ConfigError naming the first key outside `known`.
  void require_known(const std::set<std::string>& known) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

// Shortest text that parses back to exactly v.
std::string format_number(double v);

SyntheticConfig synthetic_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const SyntheticConfig& cfg);
const std::set<std::string>& synthetic_config_keys();

}  // namespace dtg
