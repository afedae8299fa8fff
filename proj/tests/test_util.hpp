#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dtg/backbone.hpp"
#include "dtg/dataset.hpp"
#include "dtg/train.hpp"

namespace dtg::testing {

inline ModelConfig tiny_model_config(int d_in = 4, int vocab = 8, int t_max = 12) {
  ModelConfig c;
  c.d_in = d_in;
  c.d_model = 8;
  c.d_word = 4;
  c.t_max = t_max;
  c.max_query_len = 8;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_fusion = 1;
  c.n_layers_dec = 1;
  c.ffn_dim = 8;
  c.vocab_size = vocab;
  return c;
}

inline Sample make_sample(const std::string& id, int length, int dim, Annotation a,
                          std::vector<int> tokens = {1, 2, 3},
                          std::string text = "person opens door", std::uint64_t seed = 1) {
  Rng rng = make_rng(seed, "test-sample", hash_string(id));
  std::normal_distribution<float> n(0.0f, 1.0f);
  Sample s;
  s.id = id;
  s.video.clips = FeatureMatrix(length, dim);
  for (Eigen::Index r = 0; r < s.video.clips.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.video.clips.cols(); ++c) s.video.clips(r, c) = n(rng);
  }
  s.query.tokens = std::move(tokens);
  s.query.raw_text = std::move(text);
  s.annotation = a;
  return s;
}

inline SyntheticConfig small_synthetic(std::uint64_t seed = 1) {
  SyntheticConfig c;
  c.n_train = 120;
  c.n_val = 30;
  c.n_test_iid = 30;
  c.n_test_ood = 30;
  c.seed = seed;
  return c;
}

// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("dtg_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace dtg::testing
