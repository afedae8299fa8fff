#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "dtg/dataset.hpp"
#include "test_util.hpp"

using namespace dtg;
using dtg::testing::TempDir;

namespace {

void write_raw_feature_file(const std::filesystem::path& p, std::uint32_t t, std::uint32_t d,
                            std::size_t payload_floats, const char* magic = "VFEA",
                            std::uint32_t version = 1) {
  std::ofstream os(p, std::ios::binary);
  os.write(magic, 4);
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&t), 4);
  os.write(reinterpret_cast<const char*>(&d), 4);
  std::vector<float> payload(payload_floats, 0.5f);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const IngestionError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(FeatureFile, RoundTrip20x16) {
  TempDir dir("feat");
  VideoFeatures v;
  v.clips = FeatureMatrix::Random(20, 16);
  write_feature_file(dir.path() / "a.vfea", v);
  const VideoFeatures back = load_feature_file(dir.path() / "a.vfea");
  ASSERT_EQ(back.length(), 20);
  ASSERT_EQ(back.dim(), 16);
  EXPECT_EQ(std::memcmp(back.clips.data(), v.clips.data(), 320 * sizeof(float)), 0);
}

TEST(FeatureFile, MinimalOneByOne) {
  TempDir dir("feat");
  VideoFeatures v;
  v.clips = FeatureMatrix::Zero(1, 1);
  write_feature_file(dir.path() / "m.vfea", v);
  const VideoFeatures back = load_feature_file(dir.path() / "m.vfea");
  ASSERT_EQ(back.length(), 1);
  ASSERT_EQ(back.dim(), 1);
  EXPECT_EQ(back.clips(0, 0), 0.0f);
}

TEST(FeatureFile, TruncatedPayloadNamesPathAndOffset) {
  TempDir dir("feat");
  const auto p = dir.path() / "short.vfea";
  write_raw_feature_file(p, 20, 16, 319);
  const std::string msg = error_of([&] { load_feature_file(p); });
  EXPECT_NE(msg.find("short.vfea"), std::string::npos) << msg;
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte"), std::string::npos) << msg;
}

TEST(FeatureFile, MalformedHeaders) {
  TempDir dir("feat");
  write_raw_feature_file(dir.path() / "magic.vfea", 2, 2, 4, "XXXX");
  EXPECT_THROW(load_feature_file(dir.path() / "magic.vfea"), IngestionError);
  write_raw_feature_file(dir.path() / "ver.vfea", 2, 2, 4, "VFEA", 9);
  EXPECT_THROW(load_feature_file(dir.path() / "ver.vfea"), IngestionError);
  write_raw_feature_file(dir.path() / "zero.vfea", 0, 2, 0);
  EXPECT_THROW(load_feature_file(dir.path() / "zero.vfea"), IngestionError);
  write_raw_feature_file(dir.path() / "long.vfea", 2, 2, 5);
  EXPECT_THROW(load_feature_file(dir.path() / "long.vfea"), IngestionError);
  {
    std::ofstream os(dir.path() / "hdr.vfea", std::ios::binary);
    os.write("VFEA", 4);
  }
  EXPECT_THROW(load_feature_file(dir.path() / "hdr.vfea"), IngestionError);
  EXPECT_THROW(load_feature_file(dir.path() / "missing.vfea"), IngestionError);
}

TEST(FeatureFile, NonFiniteRejected) {
  TempDir dir("feat");
  VideoFeatures v;
  v.clips = FeatureMatrix::Zero(2, 2);
  v.clips(1, 1) = std::numeric_limits<float>::quiet_NaN();
  const auto p = dir.path() / "nan.vfea";
  write_feature_file(p, v);
  const std::string msg = error_of([&] { load_feature_file(p); });
  EXPECT_NE(msg.find("nan.vfea"), std::string::npos) << msg;
}

TEST(FeatureFile, RoundTripPropertyRandomShapes) {
  TempDir dir("feat");
  Rng rng(42);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int k = 0; k < 50; ++k) {
    VideoFeatures v;
    v.clips = FeatureMatrix::Random(dim(rng), dim(rng)) * 1e3f;
    write_feature_file(dir.path() / "r.vfea", v);
    const VideoFeatures back = load_feature_file(dir.path() / "r.vfea");
    ASSERT_EQ(back.clips.rows(), v.clips.rows());
    ASSERT_EQ(back.clips.cols(), v.clips.cols());
    ASSERT_EQ(std::memcmp(back.clips.data(), v.clips.data(),
                          static_cast<std::size_t>(v.clips.size()) * sizeof(float)),
              0);
  }
}

TEST(Annotations, SecondsToClips) {
  EXPECT_EQ(seconds_to_clips(2.0, 6.0, 1.0, 20), (Annotation{2, 6}));
  EXPECT_EQ(seconds_to_clips(0.0, 0.4, 1.0, 20), (Annotation{0, 0}));
  EXPECT_EQ(seconds_to_clips(3.0, 99.0, 1.0, 20), (Annotation{3, 19}));
  EXPECT_EQ(seconds_to_clips(1.0, 3.0, 0.5, 20), (Annotation{2, 6}));
  EXPECT_THROW(seconds_to_clips(7.0, 3.0, 1.0, 20), IngestionError);
}

TEST(Annotations, ReversedRecordRejectedWithWarning) {
  TempDir dir("ann");
  const auto p = dir.path() / "annotations.tsv";
  {
    std::ofstream os(p);
    os << "# id\tpath\tstart\tend\tsplit\ttext\n";
    os << "a\tf/a.vfea\t2.0\t6.0\ttrain\tperson opens door\n";
    os << "b\tf/b.vfea\t7.0\t3.0\ttrain\tperson closes door\n";
  }
  const AnnotationFile f = load_annotations(p);
  ASSERT_EQ(f.stubs.size(), 1u);
  EXPECT_EQ(f.stubs[0].id, "a");
  EXPECT_DOUBLE_EQ(f.stubs[0].start_seconds, 2.0);
  EXPECT_EQ(f.stubs[0].raw_text, "person opens door");
  ASSERT_EQ(f.warnings.size(), 1u);
  EXPECT_NE(f.warnings[0].find("b"), std::string::npos);
}

TEST(Annotations, MalformedLineIsError) {
  TempDir dir("ann");
  const auto p = dir.path() / "annotations.tsv";
  {
    std::ofstream os(p);
    os << "a\tf/a.vfea\t2.0\n";
  }
  EXPECT_THROW(load_annotations(p), IngestionError);
}

TEST(Annotations, MissingFeatureFileIsErrorAtResolution) {
  TempDir dir("ann");
  {
    std::ofstream os(dir.path() / "annotations.tsv");
    os << "a\tfeatures/a.vfea\t2.0\t6.0\ttrain\tperson opens door\n";
  }
  EXPECT_THROW(load_dataset(dir.path()), IngestionError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  TempDir dir("ds");
  const Dataset ds = generate_synthetic_dataset(dtg::testing::small_synthetic(3));
  write_dataset(dir.path(), ds.samples);
  const Dataset back = load_dataset(dir.path());
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  EXPECT_EQ(back.vocab.words(), ds.vocab.words());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& a = ds.samples[i];
    const Sample& b = back.samples[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.annotation, b.annotation) << a.id;
    EXPECT_EQ(a.split, b.split);
    EXPECT_EQ(a.query.tokens, b.query.tokens);
    EXPECT_TRUE((a.video.clips.array() == b.video.clips.array()).all());
  }
}

TEST(Vocabulary, UnknownWordsMapToZero) {
  const std::vector<std::string> texts{"Person opens the door", "person's bag"};
  const Vocabulary v = Vocabulary::build(texts);
  EXPECT_EQ(v.words().front(), "<unk>");
  EXPECT_EQ(v.id("zebra"), Vocabulary::kUnknown);
  EXPECT_NE(v.id("door"), Vocabulary::kUnknown);
  EXPECT_EQ(tokenize("Person's BAG, again!"),
            (std::vector<std::string>{"persons", "bag", "again"}));
}

TEST(Synthetic, DeterministicForSameSeed) {
  const SyntheticConfig cfg = dtg::testing::small_synthetic(7);
  const Dataset a = generate_synthetic_dataset(cfg);
  const Dataset b = generate_synthetic_dataset(cfg);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].id, b.samples[i].id);
    EXPECT_EQ(a.samples[i].annotation, b.samples[i].annotation);
    EXPECT_EQ(a.samples[i].query.raw_text, b.samples[i].query.raw_text);
    ASSERT_EQ(std::memcmp(a.samples[i].video.clips.data(), b.samples[i].video.clips.data(),
                          static_cast<std::size_t>(a.samples[i].video.clips.size()) *
                              sizeof(float)),
              0);
  }
}

TEST(Synthetic, BandAtFixedLength20) {
  SyntheticConfig cfg = dtg::testing::small_synthetic(11);
  cfg.t_min = cfg.t_max = 20;
  cfg.bias_lo = 0.0;
  cfg.bias_hi = 0.3;
  const Dataset ds = generate_synthetic_dataset(cfg);
  for (const Sample& s : ds.samples) {
    if (s.split == Split::test_ood) {
      EXPECT_GE(s.annotation.tau_s, 6) << s.id;
    } else {
      EXPECT_LE(s.annotation.tau_s, 5) << s.id;
    }
  }
}

TEST(Synthetic, BandPropertyAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticConfig cfg = dtg::testing::small_synthetic(seed);
    cfg.bias_lo = 0.1;
    cfg.bias_hi = 0.4;
    const Dataset ds = generate_synthetic_dataset(cfg);
    for (const Sample& s : ds.samples) {
      const double x = static_cast<double>(s.annotation.tau_s) / s.video.length();
      const bool inside = x >= cfg.bias_lo && x < cfg.bias_hi;
      EXPECT_EQ(inside, s.split != Split::test_ood) << s.id << " x=" << x;
      EXPECT_NO_THROW(validate(s));
    }
  }
}

TEST(Synthetic, MomentFeaturesCarryTheAction) {
  SyntheticConfig cfg = dtg::testing::small_synthetic(5);
  cfg.noise_sigma = 0.0;
  const Dataset ds = generate_synthetic_dataset(cfg);
  for (const Sample& s : ds.samples) {
    const auto& c = s.video.clips;
    const auto inside = c.row(s.annotation.tau_s);
    for (int t = s.annotation.tau_s; t <= s.annotation.tau_e; ++t) {
      EXPECT_TRUE((c.row(t).array() == inside.array()).all());
    }
    const int outside = s.annotation.tau_s > 0 ? 0 : s.annotation.tau_e + 1;
    if (outside < s.video.length()) {
      EXPECT_FALSE((c.row(outside).array() == inside.array()).all());
    }
  }
}

TEST(Synthetic, FullBandIsConfigError) {
  SyntheticConfig cfg = dtg::testing::small_synthetic();
  cfg.bias_lo = 0.0;
  cfg.bias_hi = 1.0;
  EXPECT_THROW(generate_synthetic_dataset(cfg), ConfigError);
  cfg.bias_hi = 0.3;
  cfg.t_min = 30;
  cfg.t_max = 20;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Histogram, SingleBinConcentration) {
  const std::vector<double> x(4, 0.1);
  const TemporalHistogram h = histogram_from_locations(x, 10);
  EXPECT_EQ(h.counts, (std::vector<long>{0, 4, 0, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Histogram, FourSpreadLocations) {
  // 0.05, 0.15, 0.25, 0.95 as exact clip ratios over T = 20.
  std::vector<Sample> samples;
  for (int s : {1, 3, 5, 19}) {
    samples.push_back(dtg::testing::make_sample("h" + std::to_string(s), 20, 1, {s, s}));
  }
  const TemporalHistogram h = compute_temporal_distribution(samples, 10);
  EXPECT_EQ(h.counts, (std::vector<long>{1, 1, 1, 0, 0, 0, 0, 0, 0, 1}));
}

TEST(Histogram, BoundaryUsesFloorRule) {
  EXPECT_EQ(histogram_bin(2, 10, 10), 2);
  EXPECT_EQ(histogram_bin(0.2, 10), 2);
  EXPECT_EQ(histogram_bin(1.0, 10), 9);
  EXPECT_EQ(histogram_bin(0.0, 10), 0);
}

TEST(Histogram, ConservationForEveryBinCount) {
  const Dataset ds = generate_synthetic_dataset(dtg::testing::small_synthetic(2));
  for (int b = 1; b <= 40; ++b) {
    const TemporalHistogram h = compute_temporal_distribution(ds.samples, b);
    EXPECT_EQ(h.total(), static_cast<long>(ds.samples.size()));
    EXPECT_EQ(h.bins(), b);
  }
}

TEST(Entropy, HandValues) {
  EXPECT_DOUBLE_EQ(distribution_entropy({{4, 0, 0, 0}}), 0.0);
  EXPECT_NEAR(distribution_entropy({{1, 1, 1, 1}}), std::log(4.0), 1e-12);
  const double oracle = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
  EXPECT_NEAR(distribution_entropy({{2, 1, 1}}), oracle, 1e-12);
  EXPECT_NEAR(distribution_entropy({{2, 1, 1}}), 1.0397, 1e-4);
  EXPECT_THROW(distribution_entropy({{0, 0, 0}}), std::invalid_argument);
}
