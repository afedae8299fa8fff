#include <gtest/gtest.h>

#include <cmath>

#include "dtg/backbone.hpp"
#include "dtg/train.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dtg;
using dtg::testing::make_sample;
using dtg::testing::tiny_model_config;

namespace {

ModelConfig config_d64() {
  ModelConfig c;
  c.d_in = 16;
  c.d_model = 64;
  c.d_word = 32;
  c.t_max = 48;
  c.n_heads = 2;
  c.ffn_dim = 128;
  c.vocab_size = 20;
  return c;
}

struct Fixture {
  ParameterStore store;
  Rng rng{5};
  GroundingModel model;
  explicit Fixture(const ModelConfig& c) : model(c, store, rng) {}
};

}  // namespace

TEST(EncodeVideo, ShapeAndFiniteness) {
  Fixture f(config_d64());
  ag::Tape t;
  const Sample s = make_sample("v", 20, 16, {2, 5});
  const EncodedVideo v = f.model.encode_video(t, s.video.clips);
  EXPECT_EQ(v.features.rows(), 20);
  EXPECT_EQ(v.features.cols(), 64);
  EXPECT_TRUE(v.features.value().allFinite());
}

TEST(EncodeVideo, ZeroRowsMapToTheSameVector) {
  Fixture f(config_d64());
  ag::Tape t;
  Sample s = make_sample("v", 20, 16, {2, 5});
  s.video.clips.row(3).setZero();
  s.video.clips.row(11).setZero();
  const EncodedVideo v = f.model.encode_video(t, s.video.clips);
  EXPECT_TRUE((v.features.value().row(3).array() == v.features.value().row(11).array()).all());
}

TEST(EncodeVideo, RejectsOverlongAndWrongDimension) {
  Fixture f(config_d64());
  ag::Tape t;
  EXPECT_THROW(f.model.encode_video(t, make_sample("v", 49, 16, {0, 1}).video.clips),
               SequenceLengthError);
  EXPECT_THROW(f.model.encode_video(t, make_sample("v", 10, 15, {0, 1}).video.clips),
               std::invalid_argument);
}

TEST(EncodeVideo, PaddedRowsAreZero) {
  Fixture f(config_d64());
  ag::Tape t;
  const Sample s = make_sample("v", 20, 16, {2, 5});
  const EncodedVideo v = f.model.encode_video(t, s.video.clips, 12);
  EXPECT_EQ(v.valid, 12);
  EXPECT_TRUE((v.features.value().bottomRows(8).array() == 0.0).all());
}

TEST(EncodeQuery, ShapesDeterminismAndUnknownIds) {
  Fixture f(config_d64());
  Query q{{1, 4, 7, 2, 9}, "a b c d e"};
  ag::Tape t1;
  ag::Tape t2;
  const EncodedQuery a = f.model.encode_query(t1, q);
  const EncodedQuery b = f.model.encode_query(t2, q);
  EXPECT_EQ(a.words.rows(), 5);
  EXPECT_EQ(a.words.cols(), 64);
  EXPECT_EQ(a.sentence.rows(), 1);
  EXPECT_EQ(a.sentence.cols(), 64);
  EXPECT_TRUE((a.words.value().array() == b.words.value().array()).all());
  EXPECT_TRUE((a.sentence.value().array() == b.sentence.value().array()).all());
  Query bad{{1, 20}, "x y"};
  ag::Tape t3;
  EXPECT_THROW(f.model.encode_query(t3, bad), std::out_of_range);
}

TEST(Fuse, GateRangeAndExactGatingIdentity) {
  Fixture f(config_d64());
  ag::Tape t;
  const Sample s = make_sample("v", 20, 16, {2, 5}, {1, 2, 3});
  const auto fw = f.model.forward(t, s, false);
  const Matrix& c = fw.fusion.relevance.value();
  const Matrix& m = fw.fusion.fused.value();
  const Matrix& g = fw.fusion.gated.value();
  ASSERT_EQ(c.rows(), 20);
  ASSERT_EQ(g.rows(), 20);
  EXPECT_EQ(fw.fusion.aggregate.rows(), 1);
  EXPECT_EQ(fw.fusion.aggregate.cols(), 64);
  for (Eigen::Index r = 0; r < 20; ++r) {
    EXPECT_GE(c(r, 0), 0.0);
    EXPECT_LE(c(r, 0), 1.0);
    for (Eigen::Index k = 0; k < m.cols(); ++k) ASSERT_EQ(g(r, k), c(r, 0) * m(r, k));
  }
}

TEST(Fuse, ClosedGateZeroesFeatures) {
  Fixture f(config_d64());
  f.model.gate_output().weight->value.setZero();
  f.model.gate_output().bias->value.setConstant(-std::numeric_limits<double>::infinity());
  ag::Tape t;
  const auto fw = f.model.forward(t, make_sample("v", 20, 16, {2, 5}), false);
  EXPECT_TRUE((fw.fusion.relevance.value().array() == 0.0).all());
  EXPECT_TRUE((fw.fusion.gated.value().array() == 0.0).all());
}

TEST(Fuse, PaddingExcludedFromLossCm) {
  Fixture f(config_d64());
  ag::Tape t;
  const Sample s = make_sample("v", 20, 16, {2, 5});
  const EncodedVideo v = f.model.encode_video(t, s.video.clips, 12);
  const EncodedQuery q = f.model.encode_query(t, s.query);
  const FusionOutputs fo = f.model.fuse(t, v, q);
  EXPECT_EQ(fo.valid, 12);
  const double base = loss_cm(fo.relevance, s.annotation, fo.valid).scalar();
  Matrix altered = fo.relevance.value();
  altered.bottomRows(8).setConstant(0.999);
  const double other = loss_cm(t.constant(altered), s.annotation, fo.valid).scalar();
  EXPECT_EQ(base, other);

  // Valid clips never attend to padding: their outputs match the unpadded run.
  ag::Tape t2;
  Sample cut = s;
  cut.video.clips = s.video.clips.topRows(12);
  const auto full = f.model.forward(t2, cut, false);
  EXPECT_LT((full.fusion.gated.value() - fo.gated.value().topRows(12)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(PredictSpan, NormalizationAndMasks) {
  Fixture f(config_d64());
  for (int len : {10, 20, 48}) {
    const SpanPrediction p = f.model.predict(make_sample("v" + std::to_string(len), len, 16,
                                                         {1, 3}, {4, 5}));
    EXPECT_NEAR(p.p_start.sum(), 1.0, 1e-5);
    EXPECT_NEAR(p.p_end.sum(), 1.0, 1e-5);
    EXPECT_EQ(p.p_start.size(), 48);
    EXPECT_LE(p.start, p.end);
    EXPECT_LT(p.end, len);
    for (int i = len; i < 48; ++i) {
      EXPECT_EQ(p.p_start(i), 0.0);
      EXPECT_EQ(p.p_end(i), 0.0);
    }
    for (int i = 0; i < p.start; ++i) EXPECT_EQ(p.p_end(i), 0.0);
  }
}

TEST(PredictSpan, TeacherForcedEndMask) {
  Fixture f(config_d64());
  ag::Tape t;
  const Sample s = make_sample("v", 20, 16, {7, 9});
  const auto fw = f.model.forward(t, s, true);
  EXPECT_EQ(fw.span.start, 7);
  const Matrix& pe = fw.span.p_end.value();
  for (int i = 0; i < 7; ++i) EXPECT_EQ(pe(0, i), 0.0);
  EXPECT_NEAR(pe.sum(), 1.0, 1e-5);
}

TEST(PredictTopk, RankedByJointScore) {
  Fixture f(config_d64());
  const Sample s = make_sample("v", 15, 16, {2, 5});
  const auto top = f.model.predict_topk(s, 5);
  ASSERT_EQ(top.size(), 5u);
  for (std::size_t i = 1; i < top.size(); ++i) EXPECT_GE(top[i - 1].score, top[i].score);
  for (const auto& r : top) {
    EXPECT_LE(r.start, r.end);
    EXPECT_LT(r.end, 15);
  }
}

TEST(LossCm, Examples) {
  Vector c(4);
  c << 0.2, 0.9, 0.8, 0.1;
  const double oracle = -(std::log(0.8) + std::log(0.9) + std::log(0.8) + std::log(0.9)) / 4;
  EXPECT_NEAR(loss_cm(c, {1, 2}), oracle, 1e-12);
  EXPECT_NEAR(loss_cm(c, {1, 2}), 0.1643, 1e-4);

  EXPECT_NEAR(loss_cm(Vector::Constant(7, 0.5), {2, 4}), std::log(2.0), 1e-12);

  Vector exact(4);
  exact << 0.0, 1.0, 1.0, 0.0;
  EXPECT_LE(loss_cm(exact, {1, 2}), 2e-7);
}

TEST(LossGrounding, Examples) {
  Vector ps = Vector::Zero(12);
  Vector pe = Vector::Zero(12);
  ps(3) = 1.0;
  pe(6) = 1.0;
  EXPECT_LE(loss_grounding(ps, pe, {3, 6}), 2e-7);

  Vector u = Vector::Zero(12);
  u.head(10).setConstant(0.1);
  EXPECT_NEAR(loss_grounding(u, u, {3, 6}), std::log(10.0), 1e-12);

  ps.setZero();
  pe.setZero();
  ps(3) = 0.5;
  ps(4) = 0.5;
  pe(6) = 0.25;
  pe(7) = 0.75;
  const double oracle = 0.5 * (std::log(2.0) + std::log(4.0));
  EXPECT_NEAR(loss_grounding(ps, pe, {3, 6}), oracle, 1e-12);
  EXPECT_NEAR(loss_grounding(ps, pe, {3, 6}), 1.0397, 1e-4);
}

TEST(Backbone, GradientOfLocalizationLossMatchesFiniteDifferences) {
  const ModelConfig cfg = tiny_model_config();
  ParameterStore store;
  Rng rng(17);
  GroundingModel model(cfg, store, rng);
  const std::vector<Sample> batch{make_sample("g0", 9, 4, {2, 5}, {1, 2, 3}),
                                  make_sample("g1", 12, 4, {6, 10}, {4, 5})};
  const double lambda1 = 5.0;
  auto build = [&](ag::Tape& t) {
    ag::Var total = t.constant_scalar(0.0);
    for (const Sample& s : batch) {
      const auto fw = model.forward(t, s, true);
      ag::Var l = ag::add(loss_grounding(fw.span, s.annotation),
                          ag::scale(loss_cm(fw.fusion.relevance, s.annotation,
                                            fw.fusion.valid),
                                    lambda1));
      total = ag::add(total, ag::scale(l, 0.5));
    }
    return total;
  };
  const auto r = dtg::testing::gradient_check(
      store,
      [&] {
        ag::Tape t;
        return build(t).scalar();
      },
      [&] {
        ag::Tape t;
        t.backward(build(t));
      });
  EXPECT_GT(r.analytic_norm, 0.0);
  EXPECT_GT(r.checked, 500);
  EXPECT_LE(r.relative_error, 1e-4);
}

TEST(Backbone, TrainedModelIsClipOrderSensitive) {
  SyntheticConfig sc = dtg::testing::small_synthetic(8);
  const Dataset ds = generate_synthetic_dataset(sc);
  ModelConfig mc = tiny_model_config();
  mc.d_model = 16;
  mc.ffn_dim = 32;
  mc.t_max = 32;
  mc = model_config_for(ds, mc);
  TrainConfig tc;
  tc.mode = TrainMode::baseline;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.lr = 1e-3;
  DebiasedModel m(mc, 8);
  train(m, ds, tc);

  const Sample& s = *ds.split(Split::test_iid).front();
  Sample shuffled = s;
  Rng rng(3);
  std::vector<int> perm(static_cast<std::size_t>(s.video.length()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int r = 0; r < s.video.length(); ++r) {
    shuffled.video.clips.row(r) = s.video.clips.row(perm[static_cast<std::size_t>(r)]);
  }
  const SpanPrediction a = m.backbone().predict(s);
  const SpanPrediction b = m.backbone().predict(shuffled);
  EXPECT_GT((a.p_start - b.p_start).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = config_d64();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config_d64();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
