#include <benchmark/benchmark.h>

#include "dtg/augment.hpp"
#include "dtg/metrics.hpp"
#include "dtg/train.hpp"

using namespace dtg;

namespace {

struct Bench {
  Dataset data;
  ModelConfig model;
  TrainConfig train;

  explicit Bench(int d_model) {
    SyntheticConfig sc;
    sc.n_train = 256;
    sc.n_val = sc.n_test_iid = sc.n_test_ood = 16;
    data = generate_synthetic_dataset(sc);
    ModelConfig m = synthetic_model_preset();
    m.d_model = d_model;
    m.d_word = d_model / 2;
    m.ffn_dim = 2 * d_model;
    m.n_heads = 2;
    model = model_config_for(data, m);
    train.mode = TrainMode::full;
  }
};

void BM_Predict(benchmark::State& state) {
  const Bench b(static_cast<int>(state.range(0)));
  const DebiasedModel m(b.model, 1);
  const Sample& s = b.data.samples.front();
  for (auto _ : state) benchmark::DoNotOptimize(m.backbone().predict(s));
}
BENCHMARK(BM_Predict)->Arg(32)->Arg(64);

void BM_BatchForwardBackward(benchmark::State& state) {
  const Bench b(static_cast<int>(state.range(0)));
  DebiasedModel m(b.model, 1);
  const auto train = b.data.split(Split::train);
  const std::span<const Sample* const> batch(train.data(), 32);
  const BatchAugmentation aug = augment_batch(batch, b.train.augment, 1);
  for (auto _ : state) {
    m.store().zero_grad();
    benchmark::DoNotOptimize(accumulate_batch_gradients(m, aug, b.train, true, 1));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_BatchForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_AugmentBatch(benchmark::State& state) {
  const Bench b(32);
  const auto train = b.data.split(Split::train);
  AugmentConfig cfg;
  cfg.t_max = 48;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(augment_batch(train, cfg, ++seed));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(train.size()));
}
BENCHMARK(BM_AugmentBatch);

void BM_TemporalIou(benchmark::State& state) {
  Rng rng(1);
  std::vector<std::pair<Interval, Interval>> pairs;
  for (int i = 0; i < 1024; ++i) {
    const int s = static_cast<int>(rng() % 50);
    const int t = static_cast<int>(rng() % 50);
    pairs.push_back({{s, s + static_cast<int>(rng() % 10)}, {t, t + static_cast<int>(rng() % 10)}});
  }
  for (auto _ : state) {
    double acc = 0.0;
    for (const auto& [a, b] : pairs) acc += temporal_iou(a, b);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_TemporalIou);

}  // namespace

BENCHMARK_MAIN();
