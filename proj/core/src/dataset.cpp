#include "dtg/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "dtg/rng.hpp"

namespace dtg {
namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test_iid: return "test_iid";
    case Split::test_ood: return "test_ood";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits) {
    if (to_string(s) == name) return s;
  }
  throw IngestionError("unknown split name '" + std::string(name) + "'");
}

void validate(const Sample& s) {
  const int length = s.video.length();
  if (length < 1 || s.video.dim() < 1) {
    throw IngestionError("sample " + s.id + ": empty feature matrix");
  }
  if (!s.video.clips.allFinite()) {
    throw IngestionError("sample " + s.id + ": non-finite feature values");
  }
  if (s.query.tokens.empty()) {
    throw IngestionError("sample " + s.id + ": empty query");
  }
  const Annotation& a = s.annotation;
  if (a.tau_s < 0 || a.tau_s > a.tau_e || a.tau_e > length - 1) {
    throw IngestionError("sample " + s.id + ": annotation (" + std::to_string(a.tau_s) +
                         ", " + std::to_string(a.tau_e) + ") outside video of " +
                         std::to_string(length) + " clips");
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '\'') {
      if (c != '\'') cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : words_{"<unk>"} { index_.emplace("<unk>", kUnknown); }

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> uniq;
  for (const auto& t : texts) {
    for (auto& w : tokenize(t)) uniq.insert(std::move(w));
  }
  std::vector<std::string> words{"<unk>"};
  words.insert(words.end(), uniq.begin(), uniq.end());
  return from_words(std::move(words));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.empty() || words.front() != "<unk>") {
    throw IngestionError("vocabulary must start with <unk>");
  }
  Vocabulary v;
  v.words_ = std::move(words);
  v.index_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    v.index_.emplace(v.words_[i], static_cast<int>(i));
  }
  return v;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

constexpr std::array<char, 4> kMagic{'V', 'F', 'E', 'A'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_feature_file(const fs::path& path, const VideoFeatures& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), 4);
  put_u32(os, kFeatureFileVersion);
  put_u32(os, static_cast<std::uint32_t>(v.clips.rows()));
  put_u32(os, static_cast<std::uint32_t>(v.clips.cols()));
  for (Eigen::Index i = 0; i < v.clips.size(); ++i) {
    put_u32(os, std::bit_cast<std::uint32_t>(v.clips.data()[i]));
  }
  if (!os) throw IngestionError("write failed for " + path.string());
}

VideoFeatures load_feature_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError(path.string() + ": cannot open feature file");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  auto fail = [&](std::size_t offset, const std::string& what) {
    return IngestionError(path.string() + " at byte " + std::to_string(offset) + ": " + what);
  };
  if (bytes.size() < kHeaderBytes) throw fail(bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0) throw fail(0, "bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kFeatureFileVersion) {
    throw fail(4, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t t = get_u32(bytes.data() + 8);
  const std::uint32_t d = get_u32(bytes.data() + 12);
  if (t == 0) throw fail(8, "clip count must be positive");
  if (d == 0) throw fail(12, "feature dimension must be positive");
  const std::uint64_t expected = static_cast<std::uint64_t>(t) * d * 4;
  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (payload < expected) {
    throw fail(bytes.size(), "truncated payload (" + std::to_string(payload / 4) +
                                 " of " + std::to_string(expected / 4) + " values)");
  }
  if (payload > expected) throw fail(kHeaderBytes + expected, "trailing bytes");
  VideoFeatures v;
  v.clips.resize(t, d);
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(t) * d; ++i) {
    const std::size_t off = kHeaderBytes + i * 4;
    const float f = std::bit_cast<float>(get_u32(bytes.data() + off));
    if (!std::isfinite(f)) throw fail(off, "non-finite value");
    v.clips.data()[i] = f;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Annotation files

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, '\t')) out.push_back(cur);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

double parse_seconds(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IngestionError(where + ": cannot parse '" + s + "' as seconds");
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw IngestionError(where + ": cannot parse '" + s + "' as seconds");
  }
  return v;
}

std::string format_seconds(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

AnnotationFile load_annotations(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError(path.string() + ": cannot open annotation file");
  AnnotationFile out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto fields = split_tabs(line);
    if (fields.size() != 6) {
      throw IngestionError(where + ": expected 6 tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    SampleStub stub;
    stub.id = fields[0];
    stub.feature_path = fields[1];
    stub.start_seconds = parse_seconds(fields[2], where);
    stub.end_seconds = parse_seconds(fields[3], where);
    stub.split = parse_split(fields[4]);
    stub.raw_text = fields[5];
    if (stub.start_seconds > stub.end_seconds) {
      out.warnings.push_back(where + ": rejected record " + stub.id + " (start " +
                             fields[2] + "s after end " + fields[3] + "s)");
      continue;
    }
    out.stubs.push_back(std::move(stub));
  }
  return out;
}

void write_annotations(const fs::path& path, std::span<const SampleStub> stubs) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
  for (const auto& s : stubs) {
    os << s.id << '\t' << s.feature_path << '\t' << format_seconds(s.start_seconds) << '\t'
       << format_seconds(s.end_seconds) << '\t' << to_string(s.split) << '\t'
       << s.raw_text << '\n';
  }
}

Annotation seconds_to_clips(double start_seconds, double end_seconds,
                            double clip_seconds, int length) {
  if (!(clip_seconds > 0.0)) throw IngestionError("clip duration must be positive");
  if (length < 1) throw IngestionError("video must have at least one clip");
  auto to_clip = [&](double sec) {
    const double c = std::floor(sec / clip_seconds);
    return static_cast<int>(std::clamp(c, 0.0, static_cast<double>(length - 1)));
  };
  Annotation a{to_clip(start_seconds), to_clip(end_seconds)};
  if (a.tau_s > a.tau_e) {
    throw IngestionError("start clip " + std::to_string(a.tau_s) + " after end clip " +
                         std::to_string(a.tau_e));
  }
  return a;
}

std::vector<const Sample*> Dataset::split(Split s) const {
  std::vector<const Sample*> out;
  for (const auto& x : samples) {
    if (x.split == s) out.push_back(&x);
  }
  return out;
}

int Dataset::feature_dim() const {
  return samples.empty() ? 0 : samples.front().video.dim();
}

int Dataset::max_length() const {
  int m = 0;
  for (const auto& s : samples) m = std::max(m, s.video.length());
  return m;
}

Dataset load_dataset(const fs::path& dir, double clip_seconds, const Vocabulary* vocab) {
  const fs::path ann_path = dir / "annotations.tsv";
  AnnotationFile ann = load_annotations(ann_path);
  Dataset ds;
  ds.warnings = std::move(ann.warnings);
  if (vocab != nullptr) {
    ds.vocab = *vocab;
  } else {
    std::vector<std::string> texts;
    for (const auto& s : ann.stubs) texts.push_back(s.raw_text);
    ds.vocab = Vocabulary::build(texts);
  }
  int dim = -1;
  for (auto& stub : ann.stubs) {
    const fs::path fpath = dir / stub.feature_path;
    if (!fs::exists(fpath)) {
      throw IngestionError(ann_path.string() + ": feature file " + fpath.string() +
                           " for " + stub.id + " does not exist");
    }
    Sample s;
    s.id = stub.id;
    s.video = load_feature_file(fpath);
    if (dim < 0) dim = s.video.dim();
    if (s.video.dim() != dim) {
      throw IngestionError(fpath.string() + ": feature dimension " +
                           std::to_string(s.video.dim()) + " differs from " +
                           std::to_string(dim));
    }
    s.query.raw_text = stub.raw_text;
    s.query.tokens = ds.vocab.encode(stub.raw_text);
    if (s.query.tokens.empty()) {
      ds.warnings.push_back("rejected record " + stub.id + " (empty query)");
      continue;
    }
    s.annotation = seconds_to_clips(stub.start_seconds, stub.end_seconds, clip_seconds,
                                    s.video.length());
    s.split = stub.split;
    validate(s);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_dataset(const fs::path& dir, std::span<const Sample> samples,
                   double clip_seconds) {
  fs::create_directories(dir / "features");
  std::vector<SampleStub> stubs;
  stubs.reserve(samples.size());
  for (const auto& s : samples) {
    const std::string rel = "features/" + s.id + ".vfea";
    write_feature_file(dir / rel, s.video);
    SampleStub stub;
    stub.id = s.id;
    stub.feature_path = rel;
    stub.start_seconds = s.annotation.tau_s * clip_seconds;
    // Midpoint of the end clip so the floor rule maps it back exactly.
    stub.end_seconds = (s.annotation.tau_e + 0.5) * clip_seconds;
    stub.split = s.split;
    stub.raw_text = s.query.raw_text;
    stubs.push_back(std::move(stub));
  }
  write_annotations(dir / "annotations.tsv", stubs);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

int SyntheticConfig::count(Split s) const {
  switch (s) {
    case Split::train: return n_train;
    case Split::val: return n_val;
    case Split::test_iid: return n_test_iid;
    case Split::test_ood: return n_test_ood;
  }
  return 0;
}

namespace {

bool in_band(int tau_s, int length, double lo, double hi) {
  const double x = static_cast<double>(tau_s) / length;
  return x >= lo && x < hi;
}

std::vector<int> start_candidates(int length, int moment, double lo, double hi, bool ood) {
  std::vector<int> out;
  for (int t = 0; t + moment <= length; ++t) {
    if (in_band(t, length, lo, hi) != ood) out.push_back(t);
  }
  return out;
}

const std::vector<std::string>& action_phrases() {
  static const std::vector<std::string> k{
      "opens the door",       "closes the window",  "pours a drink",
      "sits on the couch",    "reads a book",       "washes the dishes",
      "plays the guitar",     "throws a ball",      "takes off shoes",
      "eats a sandwich",      "folds the towel",    "sweeps the floor",
      "turns on the light",   "holds a phone",      "laughs at the tv",
      "puts on a jacket"};
  return k;
}

const std::vector<std::string>& context_words() {
  static const std::vector<std::string> k{"again", "then", "after"};
  return k;
}

std::vector<float> unit_gaussian(int dim, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  for (auto& x : v) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

}  // namespace

std::string synthetic_action_phrase(int action) {
  const auto& phrases = action_phrases();
  if (action < static_cast<int>(phrases.size())) return phrases[static_cast<std::size_t>(action)];
  return "performs action" + std::to_string(action);
}

void SyntheticConfig::validate() const {
  if (n_actions < 1) throw ConfigError("n_actions must be >= 1");
  if (d_feat < 1) throw ConfigError("d_feat must be >= 1");
  if (t_min < 1 || t_min > t_max) throw ConfigError("need 1 <= t_min <= t_max");
  if (moment_min < 1 || moment_min > moment_max || moment_max > t_min) {
    throw ConfigError("need 1 <= moment_min <= moment_max <= t_min");
  }
  if (!(bias_lo >= 0.0 && bias_lo < bias_hi && bias_hi <= 1.0)) {
    throw ConfigError("bias_band must satisfy 0 <= lo < hi <= 1");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(keyword_rate >= 0.0 && keyword_rate <= 1.0)) {
    throw ConfigError("keyword_rate must lie in [0, 1]");
  }
  if (n_train < 0 || n_val < 0 || n_test_iid < 0 || n_test_ood < 0) {
    throw ConfigError("split counts must be non-negative");
  }
  for (int len = t_min; len <= t_max; ++len) {
    for (int m = moment_min; m <= moment_max; ++m) {
      if (start_candidates(len, m, bias_lo, bias_hi, false).empty()) {
        throw ConfigError("bias_band admits no start for length " + std::to_string(len) +
                          " and moment " + std::to_string(m));
      }
      if (start_candidates(len, m, bias_lo, bias_hi, true).empty()) {
        throw ConfigError("bias_band complement is empty for length " +
                          std::to_string(len) + " and moment " + std::to_string(m));
      }
    }
  }
}

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng emb_rng = make_rng(cfg.seed, "synthetic-embeddings");
  const std::vector<float> background = unit_gaussian(cfg.d_feat, emb_rng);
  std::vector<std::vector<float>> actions;
  for (int a = 0; a < cfg.n_actions; ++a) actions.push_back(unit_gaussian(cfg.d_feat, emb_rng));

  Dataset ds;
  std::vector<std::string> texts;
  for (Split split : kAllSplits) {
    const bool ood = split == Split::test_ood;
    for (int i = 0; i < cfg.count(split); ++i) {
      Rng rng = make_rng(cfg.seed, "synthetic-sample", static_cast<int>(split), i);
      const int action = std::uniform_int_distribution<int>(0, cfg.n_actions - 1)(rng);
      const int length = std::uniform_int_distribution<int>(cfg.t_min, cfg.t_max)(rng);
      const int moment = std::uniform_int_distribution<int>(cfg.moment_min, cfg.moment_max)(rng);
      const auto starts = start_candidates(length, moment, cfg.bias_lo, cfg.bias_hi, ood);
      const int start = starts[std::uniform_int_distribution<std::size_t>(
          0, starts.size() - 1)(rng)];
      const bool with_context = std::bernoulli_distribution(cfg.keyword_rate)(rng);
      const std::string& ctx =
          context_words()[std::uniform_int_distribution<std::size_t>(
              0, context_words().size() - 1)(rng)];

      Sample s;
      s.id = std::string(to_string(split)) + "_" + std::to_string(i);
      s.split = split;
      s.annotation = {start, start + moment - 1};
      s.query.raw_text = "person " + synthetic_action_phrase(action);
      if (with_context) s.query.raw_text += " " + ctx;
      s.video.clips.resize(length, cfg.d_feat);
      std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
      for (int t = 0; t < length; ++t) {
        const bool inside = t >= s.annotation.tau_s && t <= s.annotation.tau_e;
        const auto& base = inside ? actions[static_cast<std::size_t>(action)] : background;
        for (int d = 0; d < cfg.d_feat; ++d) {
          s.video.clips(t, d) =
              base[static_cast<std::size_t>(d)] + static_cast<float>(noise(rng));
        }
      }
      texts.push_back(s.query.raw_text);
      ds.samples.push_back(std::move(s));
    }
  }
  ds.vocab = Vocabulary::build(texts);
  for (auto& s : ds.samples) s.query.tokens = ds.vocab.encode(s.query.raw_text);
  return ds;
}

// ---------------------------------------------------------------------------
// Histograms

long TemporalHistogram::total() const {
  long n = 0;
  for (long c : counts) n += c;
  return n;
}

int histogram_bin(double x, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  const double b = std::floor(x * bins);
  return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(bins - 1)));
}

int histogram_bin(int tau_s, int length, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (length < 1) throw std::invalid_argument("histogram sample with empty video");
  const long b = static_cast<long>(bins) * tau_s / length;
  return static_cast<int>(std::clamp<long>(b, 0, bins - 1));
}

TemporalHistogram compute_temporal_distribution(std::span<const Sample* const> samples,
                                                int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (samples.empty()) throw std::invalid_argument("histogram of an empty sample set");
  TemporalHistogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (const Sample* s : samples) {
    ++h.counts[static_cast<std::size_t>(
        histogram_bin(s->annotation.tau_s, s->video.length(), bins))];
  }
  return h;
}

TemporalHistogram compute_temporal_distribution(std::span<const Sample> samples, int bins) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return compute_temporal_distribution(std::span<const Sample* const>(ptrs), bins);
}

TemporalHistogram histogram_from_locations(std::span<const double> locations, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  TemporalHistogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double x : locations) ++h.counts[static_cast<std::size_t>(histogram_bin(x, bins))];
  return h;
}

double distribution_entropy(const TemporalHistogram& h) {
  const long total = h.total();
  if (total <= 0) throw std::invalid_argument("entropy of an empty histogram");
  double e = 0.0;
  for (long c : h.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    e -= p * std::log(p);
  }
  return e;
}

}  // namespace dtg
