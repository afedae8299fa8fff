#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "dtg/checkpoint.hpp"
#include "dtg/config.hpp"
#include "dtg/train.hpp"
#include "test_util.hpp"

using namespace dtg;
using dtg::testing::TempDir;
using dtg::testing::tiny_model_config;

namespace {

struct SmallRun {
  Dataset data = generate_synthetic_dataset(dtg::testing::small_synthetic(6));
  ModelConfig model = [this] {
    ModelConfig m = tiny_model_config();
    m.t_max = 32;
    return model_config_for(data, m);
  }();

  TrainConfig config(TrainMode mode, int epochs = 2) const {
    TrainConfig c;
    c.mode = mode;
    c.epochs = epochs;
    c.batch_size = 16;
    c.lr = 1e-3;
    c.seed = 4;
    return c;
  }
};

bool same_parameters(const DebiasedModel& a, const DebiasedModel& b) {
  const auto& pa = a.store().all();
  const auto& pb = b.store().all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.size() != pb[i]->value.size()) return false;
    if (std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                    static_cast<std::size_t>(pa[i]->value.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(TotalLoss, Examples) {
  TrainConfig cfg;
  cfg.mode = TrainMode::baseline;
  EXPECT_DOUBLE_EQ(total_loss({1.0, 0.2, 0.0, 0.0}, cfg), 2.0);

  cfg.mode = TrainMode::full;
  EXPECT_NEAR(total_loss({1.0, 0.2, 1.3863, 1.0}, cfg), 4.3863, 1e-12);

  cfg.lambda2 = cfg.lambda3 = 0.0;
  TrainConfig base;
  base.mode = TrainMode::baseline;
  EXPECT_EQ(total_loss({1.0, 0.2, 1.3863, 1.0}, cfg), total_loss({1.0, 0.2, 0, 0}, base));
}

TEST(TotalLoss, AbsentComponentsContributeZero) {
  TrainConfig cfg;
  const LossComponents c{1.0, 0.2, 0.7, 0.4};
  cfg.mode = TrainMode::baseline;
  EXPECT_DOUBLE_EQ(total_loss(c, cfg), 2.0);
  cfg.mode = TrainMode::aug_only;
  EXPECT_DOUBLE_EQ(total_loss(c, cfg), 2.0);
  cfg.mode = TrainMode::aug_ld;
  EXPECT_DOUBLE_EQ(total_loss(c, cfg), 2.7);
  cfg.mode = TrainMode::aug_lkl;
  EXPECT_DOUBLE_EQ(total_loss(c, cfg), 2.4);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lambda2 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_train_mode("everything"), ConfigError);
  for (auto m : {TrainMode::baseline, TrainMode::aug_only, TrainMode::aug_ld,
                 TrainMode::aug_lkl, TrainMode::full}) {
    EXPECT_EQ(parse_train_mode(to_string(m)), m);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store;
  Parameter& p = store.create("w", 1, 3);
  p.value << 1.0, 2.0, 3.0;
  p.grad = Matrix(1, 3);
  p.grad << 0.5, -2.0, 0.0;
  Adam opt(0.1, 0.9, 0.999, 1e-8);
  opt.step(store);
  EXPECT_NEAR(p.value(0, 0), 0.9, 1e-6);
  EXPECT_NEAR(p.value(0, 1), 2.1, 1e-6);
  EXPECT_EQ(p.value(0, 2), 3.0);
}

TEST(Train, ModeContractOnLossComponents) {
  SmallRun run;
  DebiasedModel base(run.model, 4);
  const TrainReport rb = train(base, run.data, run.config(TrainMode::baseline));
  DebiasedModel full(run.model, 4);
  const TrainReport rf = train(full, run.data, run.config(TrainMode::full));
  ASSERT_EQ(rb.epochs.size(), 2u);
  ASSERT_EQ(rf.epochs.size(), 2u);
  for (const auto& e : rb.epochs) {
    EXPECT_EQ(e.components.l_d, 0.0);
    EXPECT_EQ(e.components.l_kl, 0.0);
    EXPECT_EQ(e.variants, 0);
  }
  for (const auto& e : rf.epochs) {
    EXPECT_GT(e.components.l_d, 0.0);
    EXPECT_NE(e.components.l_kl, 0.0);
    EXPECT_GT(e.variants, 0);
    EXPECT_TRUE(std::isfinite(e.total));
  }
}

TEST(Train, SeedDeterminism) {
  SmallRun run;
  DebiasedModel a(run.model, 4);
  DebiasedModel b(run.model, 4);
  const TrainReport ra = train(a, run.data, run.config(TrainMode::full));
  const TrainReport rb = train(b, run.data, run.config(TrainMode::full));
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].total, rb.epochs[i].total);
    EXPECT_EQ(ra.epochs[i].components.l_d, rb.epochs[i].components.l_d);
    EXPECT_EQ(ra.epochs[i].components.l_kl, rb.epochs[i].components.l_kl);
    EXPECT_EQ(ra.epochs[i].val_r1_iou05, rb.epochs[i].val_r1_iou05);
  }
  EXPECT_TRUE(same_parameters(a, b));

  TrainConfig other = run.config(TrainMode::full);
  other.seed = 5;
  DebiasedModel c(run.model, 5);
  const TrainReport rc = train(c, run.data, other);
  EXPECT_NE(rc.epochs[0].total, ra.epochs[0].total);
}

TEST(Train, ZeroWeightFullModeMatchesAugOnlyBitForBit) {
  SmallRun run;
  TrainConfig full = run.config(TrainMode::full);
  full.lambda2 = full.lambda3 = 0.0;
  DebiasedModel a(run.model, 4);
  DebiasedModel b(run.model, 4);
  const TrainReport ra = train(a, run.data, full);
  const TrainReport rb = train(b, run.data, run.config(TrainMode::aug_only));
  EXPECT_TRUE(same_parameters(a, b));
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].components.l_g, rb.epochs[i].components.l_g);
    EXPECT_EQ(ra.epochs[i].components.l_cm, rb.epochs[i].components.l_cm);
    EXPECT_EQ(ra.epochs[i].total, rb.epochs[i].total);
    EXPECT_GT(ra.epochs[i].components.l_d, 0.0);
  }
}

TEST(Train, NonFiniteLossAbortsWithBatchId) {
  SmallRun run;
  TrainConfig cfg = run.config(TrainMode::baseline, 3);
  cfg.lr = 1e300;
  DebiasedModel m(run.model, 4);
  try {
    train(m, run.data, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.batch, 0);
    EXPECT_NE(std::string(e.what()).find("batch " + std::to_string(e.batch)),
              std::string::npos);
  }
}

TEST(Train, RequiresTrainAndValSplits) {
  SmallRun run;
  Dataset no_val = run.data;
  std::erase_if(no_val.samples, [](const Sample& s) { return s.split == Split::val; });
  DebiasedModel m(run.model, 4);
  EXPECT_THROW(train(m, no_val, run.config(TrainMode::baseline)), ConfigError);
}

TEST(Train, ReportSerializesOneRecordPerEpoch) {
  SmallRun run;
  DebiasedModel m(run.model, 4);
  TempDir dir("ckpt");
  TrainHooks hooks;
  int seen = 0;
  hooks.on_epoch = [&](const EpochRecord&) { ++seen; };
  hooks.checkpoint_dir = dir.path();
  const TrainReport r = train(m, run.data, run.config(TrainMode::aug_lkl, 3), hooks);
  EXPECT_EQ(seen, 3);
  const std::string jl = r.to_jsonl();
  EXPECT_EQ(std::count(jl.begin(), jl.end(), '\n'), 3);
  EXPECT_NE(jl.find("\"l_kl\""), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "last.ckpt"));
  EXPECT_EQ(r.checkpoint, dir.path() / "best.ckpt");
  EXPECT_GE(r.best_epoch, 0);
  EXPECT_EQ(r.best_val, r.epochs[static_cast<std::size_t>(r.best_epoch)].val_r1_iou05);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  SmallRun run;
  DebiasedModel m(run.model, 9);
  const TemporalPrior prior(0.1, 0.35);
  TempDir dir("ckpt");
  save_checkpoint(dir.path() / "m.ckpt", m, run.data.vocab, prior);
  const LoadedCheckpoint ck = load_checkpoint(dir.path() / "m.ckpt");
  EXPECT_TRUE(same_parameters(m, *ck.model));
  EXPECT_EQ(ck.vocab.words(), run.data.vocab.words());
  EXPECT_EQ(ck.prior.start_fraction(), 0.1);
  EXPECT_EQ(ck.prior.end_fraction(), 0.35);
  const Sample& s = run.data.samples.front();
  EXPECT_TRUE(m.backbone().predict(s).p_start == ck.model->backbone().predict(s).p_start);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  SmallRun run;
  DebiasedModel m(run.model, 9);
  TempDir dir("ckpt");
  const auto p = dir.path() / "m.ckpt";
  save_checkpoint(p, m, run.data.vocab, TemporalPrior(0.0, 0.3));
  const auto size = std::filesystem::file_size(p);
  std::filesystem::resize_file(p, size - 9);
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << "NOPE";
  }
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), CheckpointError);
}

TEST(Prior, FitsModalCellAndScales) {
  std::vector<Sample> s;
  for (int i = 0; i < 5; ++i) {
    s.push_back(dtg::testing::make_sample("a" + std::to_string(i), 20, 1, {2, 5}));
  }
  s.push_back(dtg::testing::make_sample("b", 20, 1, {15, 19}));
  std::vector<const Sample*> ptrs;
  for (const auto& x : s) ptrs.push_back(&x);
  const TemporalPrior p = TemporalPrior::fit(ptrs);
  EXPECT_DOUBLE_EQ(p.start_fraction(), 0.1);
  EXPECT_DOUBLE_EQ(p.end_fraction(), 0.3);
  EXPECT_EQ(p.predict(20), (Interval{2, 5}));
  EXPECT_EQ(p.predict(40), (Interval{4, 11}));
  EXPECT_EQ(p.predict(1), (Interval{0, 0}));
}

TEST(Evaluate, ConstantFullSpanPredictorMissesShortMoments) {
  SyntheticConfig sc = dtg::testing::small_synthetic(2);
  sc.t_min = sc.t_max = 20;
  sc.moment_min = sc.moment_max = 4;
  const Dataset ds = generate_synthetic_dataset(sc);
  ModelConfig mc = tiny_model_config();
  mc.t_max = 20;
  DebiasedModel m(model_config_for(ds, mc), 1);
  const TemporalPrior whole(0.0, 1.0);
  EvalOptions opt;
  opt.prior = &whole;
  opt.split = "test_iid";
  const auto samples = ds.split(Split::test_iid);
  EXPECT_EQ(whole.predict(20), (Interval{0, 19}));
  EXPECT_DOUBLE_EQ(temporal_iou({0, 19}, {samples[0]->annotation.tau_s,
                                          samples[0]->annotation.tau_e}),
                   0.2);
  const MetricTable t = evaluate(m.backbone(), samples, opt);
  EXPECT_EQ(t.find("prior", "R", 1, 0.3, "test_iid"), 0.0);
  EXPECT_EQ(t.rows.size(), 12u);
  for (const auto& r : t.rows) {
    if (r.metric == "dR") EXPECT_LE(r.value, *t.find(r.method, "R", r.n, r.theta));
  }
}

TEST(Evaluate, EmptyThresholdsGiveEmptyTable) {
  SmallRun run;
  DebiasedModel m(run.model, 1);
  EvalOptions opt;
  opt.thresholds.clear();
  EXPECT_TRUE(evaluate(m.backbone(), run.data.split(Split::val), opt).rows.empty());
}

TEST(Evaluate, RecallGrowsWithN) {
  SmallRun run;
  DebiasedModel m(run.model, 1);
  EvalOptions opt;
  opt.n_values = {1, 5};
  opt.thresholds = {0.3};
  const MetricTable t = evaluate(m.backbone(), run.data.split(Split::val), opt);
  EXPECT_GE(*t.find("model", "R", 5, 0.3), *t.find("model", "R", 1, 0.3));
}

TEST(Config, ParsesOverridesAndRejectsUnknownKeys) {
  KeyValueConfig kv = KeyValueConfig::parse(
      "# comment\nmode = aug_ld\nlambda1=2.5\n\nepochs = 7\nkl_clamp = off\n"
      "keywords = again, then\nlambda_grl = 0.5\n");
  const TrainConfig c = train_config_from(kv);
  EXPECT_EQ(c.mode, TrainMode::aug_ld);
  EXPECT_EQ(c.lambda1, 2.5);
  EXPECT_EQ(c.epochs, 7);
  EXPECT_FALSE(c.kl_clamp);
  EXPECT_EQ(c.grl_lambda, 0.5);
  EXPECT_EQ(c.augment.keywords, (std::set<std::string>{"again", "then"}));

  kv.set("bogus", "1");
  EXPECT_THROW(kv.require_known(train_config_keys()), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("no equals sign"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("epochs = seven").get_int("epochs", 1), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("seed = -3").get_u64("seed", 1), ConfigError);
}

TEST(Config, KeyValueRoundTrips) {
  TrainConfig t;
  t.mode = TrainMode::aug_lkl;
  t.lr = 3e-4;
  t.seed = 99;
  const TrainConfig t2 = train_config_from(to_key_values(t));
  EXPECT_EQ(to_key_values(t2).to_text(), to_key_values(t).to_text());

  const ModelConfig m = synthetic_model_preset();
  EXPECT_EQ(to_key_values(model_config_from(to_key_values(m))).to_text(),
            to_key_values(m).to_text());

  SyntheticConfig s = dtg::testing::small_synthetic(12);
  s.noise_sigma = 0.123;
  const SyntheticConfig s2 = synthetic_config_from(to_key_values(s));
  EXPECT_EQ(to_key_values(s2).to_text(), to_key_values(s).to_text());
  KeyValueConfig bad = to_key_values(s);
  bad.set("colour", "blue");
  EXPECT_THROW(synthetic_config_from(bad), ConfigError);
}

// Pinned regression value for the small synthetic preset used by the
// acceptance suite (one full-mode run, about a minute on one core).
TEST(TrainRegression, FullModeThirtyEpochsFitsInDistribution) {
  SyntheticConfig sc;
  sc.n_train = 1000;
  sc.n_val = 200;
  sc.n_test_iid = 400;
  sc.n_test_ood = 400;
  const Dataset ds = generate_synthetic_dataset(sc);
  ModelConfig mc = synthetic_model_preset();
  mc.d_model = 32;
  mc.d_word = 16;
  mc.ffn_dim = 64;
  mc.n_heads = 2;
  DebiasedModel m(model_config_for(ds, mc), 1);
  TrainConfig tc = synthetic_train_preset();
  tc.mode = TrainMode::full;
  tc.epochs = 30;
  tc.seed = 1;
  train(m, ds, tc);
  EvalOptions opt;
  opt.split = "test_iid";
  const MetricTable t = evaluate(m.backbone(), ds.split(Split::test_iid), opt);
  EXPECT_GE(*t.find("model", "R", 1, 0.5, "test_iid"), 0.9);
}
