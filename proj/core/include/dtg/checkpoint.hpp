#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>

#include "dtg/dataset.hpp"
#include "dtg/train.hpp"

namespace dtg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "DTGC" binary: model shape, vocabulary, fitted prior and every named
// parameter as float64.
void save_checkpoint(const std::filesystem::path& path, const DebiasedModel& model,
                     const Vocabulary& vocab, const TemporalPrior& prior);

struct LoadedCheckpoint {
  std::unique_ptr<DebiasedModel> model;
  Vocabulary vocab;
  TemporalPrior prior;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dtg
