#include "dtg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dtg {
namespace {

std::string trim(const std::string& s) {
  auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); });
  return b < e.base() ? std::string(b, e.base()) : std::string();
}

template <typename T, typename Parse>
T parse_value(const std::string& key, const std::string& raw, const char* type, Parse parse) {
  std::size_t used = 0;
  try {
    T v = parse(raw, &used);
    if (used == raw.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as " + type);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.contains(k)) {
      throw ConfigError((origin_.empty() ? std::string() : origin_ + ": ") +
                        "unknown config key '" + k + "'");
    }
  }
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return parse_value<int>(key, it->second, "integer",
                          [](const std::string& s, std::size_t* n) { return std::stoi(s, n); });
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (!it->second.empty() && it->second.front() == '-') {
    throw ConfigError("config key '" + key + "': expected a non-negative integer");
  }
  return parse_value<std::uint64_t>(key, it->second, "unsigned integer",
                                    [](const std::string& s, std::size_t* n) {
                                      return static_cast<std::uint64_t>(std::stoull(s, n));
                                    });
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return parse_value<double>(key, it->second, "number",
                             [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as boolean");
}

std::vector<std::string> KeyValueConfig::get_list(
    const std::string& key, const std::vector<std::string>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::string> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string KeyValueConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

const std::set<std::string>& synthetic_config_keys() {
  static const std::set<std::string> k{
      "n_actions", "d_feat",     "t_min",        "t_max",   "moment_min",
      "moment_max", "bias_lo",   "bias_hi",      "noise_sigma", "keyword_rate",
      "n_train",   "n_val",      "n_test_iid",   "n_test_ood", "seed"};
  return k;
}

SyntheticConfig synthetic_config_from(const KeyValueConfig& kv) {
  kv.require_known(synthetic_config_keys());
  SyntheticConfig c;
  c.n_actions = kv.get_int("n_actions", c.n_actions);
  c.d_feat = kv.get_int("d_feat", c.d_feat);
  c.t_min = kv.get_int("t_min", c.t_min);
  c.t_max = kv.get_int("t_max", c.t_max);
  c.moment_min = kv.get_int("moment_min", c.moment_min);
  c.moment_max = kv.get_int("moment_max", c.moment_max);
  c.bias_lo = kv.get_double("bias_lo", c.bias_lo);
  c.bias_hi = kv.get_double("bias_hi", c.bias_hi);
  c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
  c.keyword_rate = kv.get_double("keyword_rate", c.keyword_rate);
  c.n_train = kv.get_int("n_train", c.n_train);
  c.n_val = kv.get_int("n_val", c.n_val);
  c.n_test_iid = kv.get_int("n_test_iid", c.n_test_iid);
  c.n_test_ood = kv.get_int("n_test_ood", c.n_test_ood);
  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

KeyValueConfig to_key_values(const SyntheticConfig& c) {
  KeyValueConfig kv;
  const auto num = format_number;
  kv.set("n_actions", std::to_string(c.n_actions));
  kv.set("d_feat", std::to_string(c.d_feat));
  kv.set("t_min", std::to_string(c.t_min));
  kv.set("t_max", std::to_string(c.t_max));
  kv.set("moment_min", std::to_string(c.moment_min));
  kv.set("moment_max", std::to_string(c.moment_max));
  kv.set("bias_lo", num(c.bias_lo));
  kv.set("bias_hi", num(c.bias_hi));
  kv.set("noise_sigma", num(c.noise_sigma));
  kv.set("keyword_rate", num(c.keyword_rate));
  kv.set("n_train", std::to_string(c.n_train));
  kv.set("n_val", std::to_string(c.n_val));
  kv.set("n_test_iid", std::to_string(c.n_test_iid));
  kv.set("n_test_ood", std::to_string(c.n_test_ood));
  kv.set("seed", std::to_string(c.seed));
  return kv;
}

}  // namespace dtg
