#include "dtg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace dtg {
namespace {

constexpr char kMagic[4] = {'D', 'T', 'G', 'C'};

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, std::string path) : is_(is), path_(std::move(path)) {}
  template <typename T>
  T pod(const char* what) {
    T v{};
    raw(reinterpret_cast<char*>(&v), sizeof(T), what);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    if (n > (1u << 20)) fail(std::string("implausible string length for ") + what);
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }
  void raw(char* dst, std::size_t n, const char* what) {
    const auto at = is_.tellg();
    if (!is_.read(dst, static_cast<std::streamsize>(n))) {
      fail(std::string("truncated ") + what + " at byte " + std::to_string(at));
    }
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(path_ + ": " + msg);
  }

 private:
  std::ifstream& is_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DebiasedModel& model,
                     const Vocabulary& vocab, const TemporalPrior& prior) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    Writer w(os);
    os.write(kMagic, 4);
    w.pod(kCheckpointVersion);
    const ModelConfig& c = model.config();
    for (int v : {c.d_in, c.d_model, c.d_word, c.t_max, c.max_query_len, c.n_heads,
                  c.n_layers_enc, c.n_layers_fusion, c.n_layers_dec, c.ffn_dim,
                  c.vocab_size}) {
      w.pod(static_cast<std::int32_t>(v));
    }
    w.pod(c.dropout);
    w.pod(static_cast<std::uint32_t>(vocab.size()));
    for (const auto& word : vocab.words()) w.str(word);
    w.pod(prior.start_fraction());
    w.pod(prior.end_fraction());
    const auto& params = model.store().all();
    w.pod(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      w.str(p->name);
      w.pod(static_cast<std::int64_t>(p->value.rows()));
      w.pod(static_cast<std::int64_t>(p->value.cols()));
      os.write(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  for (int* f : {&c.d_in, &c.d_model, &c.d_word, &c.t_max, &c.max_query_len, &c.n_heads,
                 &c.n_layers_enc, &c.n_layers_fusion, &c.n_layers_dec, &c.ffn_dim,
                 &c.vocab_size}) {
    *f = r.pod<std::int32_t>("model config");
  }
  c.dropout = r.pod<double>("model config");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid model config: ") + e.what());
  }

  const auto n_words = r.pod<std::uint32_t>("vocabulary size");
  std::vector<std::string> words;
  words.reserve(n_words);
  for (std::uint32_t i = 0; i < n_words; ++i) words.push_back(r.str("vocabulary"));

  LoadedCheckpoint out;
  try {
    out.vocab = Vocabulary::from_words(std::move(words));
  } catch (const IngestionError& e) {
    r.fail(e.what());
  }
  const double ps = r.pod<double>("prior");
  const double pe = r.pod<double>("prior");
  try {
    out.prior = TemporalPrior(ps, pe);
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }

  out.model = std::make_unique<DebiasedModel>(c, 0);
  const auto n_params = r.pod<std::uint32_t>("parameter count");
  if (n_params != out.model->store().all().size()) {
    r.fail("parameter count " + std::to_string(n_params) + " does not match the model (" +
           std::to_string(out.model->store().all().size()) + ")");
  }
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = r.str("parameter name");
    Parameter* p = out.model->store().find(name);
    if (p == nullptr) r.fail("unknown parameter '" + name + "'");
    const auto rows = r.pod<std::int64_t>("parameter shape");
    const auto cols = r.pod<std::int64_t>("parameter shape");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      r.fail("shape mismatch for '" + name + "'");
    }
    r.raw(reinterpret_cast<char*>(p->value.data()),
          static_cast<std::size_t>(p->value.size()) * sizeof(double), "parameter data");
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after parameters");
  return out;
}

}  // namespace dtg
