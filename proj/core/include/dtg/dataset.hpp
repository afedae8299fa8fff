#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dtg {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test_iid, test_ood };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);
inline constexpr Split kAllSplits[] = {Split::train, Split::val, Split::test_iid,
                                       Split::test_ood};

// Clip-level features, one row per clip.
struct VideoFeatures {
  FeatureMatrix clips;

  int length() const { return static_cast<int>(clips.rows()); }
  int dim() const { return static_cast<int>(clips.cols()); }
};

struct Query {
  std::vector<int> tokens;
  std::string raw_text;
};

// Inclusive clip indices of the target moment.
struct Annotation {
  int tau_s = 0;
  int tau_e = 0;

  bool operator==(const Annotation&) const = default;
};

struct Sample {
  std::string id;
  VideoFeatures video;
  Query query;
  Annotation annotation;
  Split split = Split::train;
};

// Throws IngestionError when the sample breaks the data-model invariants.
void validate(const Sample& s);

// Lowercased alphanumeric words of a query string.
std::vector<std::string> tokenize(std::string_view text);

// Word to id mapping; id 0 is reserved for unknown words.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;

  Vocabulary();
  static Vocabulary build(std::span<const std::string> texts);
  static Vocabulary from_words(std::vector<std::string> words);

  int id(std::string_view word) const;
  std::vector<int> encode(std::string_view text) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

// ---- feature files ("VFEA" little-endian binary) ----

inline constexpr std::uint32_t kFeatureFileVersion = 1;

void write_feature_file(const std::filesystem::path& path, const VideoFeatures& v);
VideoFeatures load_feature_file(const std::filesystem::path& path);

// ---- annotation files (tab-separated, one record per line) ----

struct SampleStub {
  std::string id;
  std::string feature_path;  // relative to the annotation file's directory
  double start_seconds = 0.0;
  double end_seconds = 0.0;
  Split split = Split::train;
  std::string raw_text;
};

struct AnnotationFile {
  std::vector<SampleStub> stubs;
  std::vector<std::string> warnings;
};

AnnotationFile load_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       std::span<const SampleStub> stubs);

// Start uses floor, end uses the clip containing the end timestamp; both are
// clamped to [0, length-1]. Throws IngestionError if start ends up after end.
Annotation seconds_to_clips(double start_seconds, double end_seconds,
                            double clip_seconds, int length);

struct Dataset {
  std::vector<Sample> samples;
  Vocabulary vocab;
  std::vector<std::string> warnings;

  std::vector<const Sample*> split(Split s) const;
  int feature_dim() const;
  int max_length() const;
};

// Loads <dir>/annotations.tsv and the referenced feature files. When vocab
// is null a vocabulary is built from every query in the file.
Dataset load_dataset(const std::filesystem::path& dir, double clip_seconds = 1.0,
                     const Vocabulary* vocab = nullptr);
// Writes features/<id>.vfea and annotations.tsv under dir.
void write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples,
                   double clip_seconds = 1.0);

// ---- synthetic biased benchmark ----

struct SyntheticConfig {
  int n_actions = 8;
  int d_feat = 16;
  int t_min = 16;
  int t_max = 28;
  int moment_min = 3;
  int moment_max = 8;
  double bias_lo = 0.0;
  double bias_hi = 0.3;
  double noise_sigma = 0.3;
  double keyword_rate = 0.1;  // fraction of queries carrying a context word
  int n_train = 2000;
  int n_val = 200;
  int n_test_iid = 400;
  int n_test_ood = 400;
  std::uint64_t seed = 1;

  int count(Split s) const;
  void validate() const;  // throws ConfigError
};

// Deterministic in cfg. Training-like splits start inside the bias band
// [lo, hi) of normalized time, test_ood starts outside it.
Dataset generate_synthetic_dataset(const SyntheticConfig& cfg);

// Word used in synthetic queries for action a.
std::string synthetic_action_phrase(int action);

// ---- temporal distribution diagnostics ----

struct TemporalHistogram {
  std::vector<long> counts;

  int bins() const { return static_cast<int>(counts.size()); }
  long total() const;
};

// Bin index of a normalized location x in [0, 1]; x = 1 maps to the last bin.
int histogram_bin(double x, int bins);
// Exact integer variant for tau_s / length.
int histogram_bin(int tau_s, int length, int bins);

TemporalHistogram compute_temporal_distribution(std::span<const Sample* const> samples,
                                                int bins);
TemporalHistogram compute_temporal_distribution(std::span<const Sample> samples, int bins);
TemporalHistogram histogram_from_locations(std::span<const double> locations, int bins);

// Shannon entropy in nats of the normalized counts.
double distribution_entropy(const TemporalHistogram& h);

}  // namespace dtg
