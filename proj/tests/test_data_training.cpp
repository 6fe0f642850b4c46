#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "gcnkit/data.hpp"
#include "gcnkit/error.hpp"
#include "gcnkit/training.hpp"
#include "test_util.hpp"

using namespace gcnkit;
using gcnkit::test::values;

namespace {

Parameter scalar(const std::string& name, float w, float g, bool decay = true) {
  Parameter p{name, Tensor({1, 1, 1, 1}), Tensor({1, 1, 1, 1}), decay};
  p.value[0] = w;
  p.grad[0] = g;
  return p;
}

SegModel toy_model(int k, bool br, std::uint64_t seed) {
  SegConfig c;
  c.classes = 3;
  c.k = k;
  c.use_br = br;
  c.canvas = {32, 32};
  SegModel m(builtin_arch(BackboneVariant::tiny), c);
  m.init(seed);
  return m;
}

}  // namespace

TEST(Synth, SameSeedSameBytes) {
  const Dataset a = synth_shapes(3, 4, 64, 5), b = synth_shapes(3, 4, 64, 5);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(values(a[i].image), values(b[i].image));
    EXPECT_EQ(a[i].label, b[i].label);
  }
  // A sample depends only on (seed, index).
  EXPECT_EQ(synth_sample(3, 2, 64, 5).label, a[2].label);
  EXPECT_NE(synth_shapes(4, 1, 64, 5)[0].label, a[0].label);
}

TEST(Synth, ShapesAndLabelRange) {
  const Dataset d = synth_shapes(11, 20, 64, 5);
  std::array<std::int64_t, 5> hist{};
  for (const SegSample& s : d) {
    EXPECT_EQ(s.image.shape(), (Shape{1, 3, 64, 64}));
    ASSERT_EQ(s.label.size(), 64u * 64u);
    for (std::int32_t v : s.label.data) {
      ASSERT_GE(v, 0);
      ASSERT_LT(v, 5);
      ++hist[static_cast<std::size_t>(v)];
    }
    for (float v : s.image.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  for (std::int64_t h : hist) EXPECT_GT(h, 0);
  EXPECT_GT(hist[0], hist[1]);  // background dominates
}

TEST(Synth, RejectsBadArguments) {
  EXPECT_THROW(synth_shapes(0, 1, 60, 5), InputError);
  EXPECT_THROW(synth_shapes(0, 1, 64, 1), InputError);
  EXPECT_THROW(synth_shapes(0, 1, 64, kShapeVocabulary + 2), InputError);
}

// Color alone carries class information, so nearest class-mean color beats
// the uniform guess; shape has to do the rest.
TEST(Synth, ColorIsInformative) {
  const int K = 5;
  const Dataset train = synth_shapes(1, 40, 64, K), val = synth_shapes(2, 20, 64, K);
  std::vector<std::array<double, 3>> mean(K, {0, 0, 0});
  std::vector<double> count(K, 0.0);
  for (const SegSample& s : train)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int c = s.label.at(0, y, x);
        for (int ch = 0; ch < 3; ++ch) mean[c][ch] += s.image.at(0, ch, y, x);
        count[c] += 1.0;
      }
  for (int c = 0; c < K; ++c)
    for (double& v : mean[c]) v /= count[c];
  std::int64_t right = 0, total = 0;
  for (const SegSample& s : val)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int gt = s.label.at(0, y, x);
        if (gt == 0) continue;
        int best = 1;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 1; c < K; ++c) {
          double d = 0.0;
          for (int ch = 0; ch < 3; ++ch) d += std::pow(s.image.at(0, ch, y, x) - mean[c][ch], 2);
          if (d < bd) bd = d, best = c;
        }
        right += best == gt;
        ++total;
      }
  EXPECT_GT(static_cast<double>(right) / total, 1.0 / (K - 1) + 0.1);
}

TEST(Augment, FlipIsAnInvolution) {
  const SegSample s = synth_sample(5, 0, 64, 5);
  const SegSample f = flip_horizontal(s);
  EXPECT_EQ(f.label.at(0, 10, 0), s.label.at(0, 10, 63));
  EXPECT_EQ(f.image.at(0, 2, 7, 5), s.image.at(0, 2, 7, 58));
  const SegSample ff = flip_horizontal(f);
  EXPECT_EQ(values(ff.image), values(s.image));
  EXPECT_EQ(ff.label, s.label);
}

TEST(Augment, MeanSubtractionCentersChannels) {
  const SegSample m = subtract_mean(synth_sample(6, 0, 64, 5));
  for (int ch = 0; ch < 3; ++ch) {
    double sum = 0.0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) sum += m.image.at(0, ch, y, x);
    EXPECT_NEAR(sum / (64 * 64), 0.0, 1e-5);
  }
}

TEST(Augment, PreservesLabelMultiset) {
  const SegSample s = synth_sample(7, 0, 64, 5);
  std::vector<std::int32_t> a = s.label.data;
  std::sort(a.begin(), a.end());
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    std::vector<std::int32_t> b = augment(s, seed).label.data;
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
  EXPECT_EQ(values(augment(s, 3).image), values(augment(s, 3).image));
}

TEST(Augment, PadUsesZeroAndIgnore) {
  const SegSample p = pad_to_canvas(synth_sample(8, 0, 32, 3), 40, 48);
  EXPECT_EQ(p.image.shape(), (Shape{1, 3, 40, 48}));
  EXPECT_EQ(p.label.at(0, 39, 0), kIgnoreLabel);
  EXPECT_EQ(p.label.at(0, 0, 47), kIgnoreLabel);
  EXPECT_EQ(p.image.at(0, 1, 39, 47), 0.0f);
  EXPECT_NE(p.label.at(0, 31, 31), kIgnoreLabel);
  EXPECT_THROW(pad_to_canvas(synth_sample(8, 0, 32, 3), 16, 48), InputError);
}

TEST(Io, NetpbmRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gcnkit_io_test";
  std::filesystem::remove_all(dir);
  const Dataset d = synth_shapes(9, 2, 32, 4);
  save_dataset_dir(dir.string(), d);
  const Dataset back = load_dataset_dir(dir.string());
  ASSERT_EQ(back.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].label, d[i].label);
    for (std::size_t j = 0; j < d[i].image.numel(); ++j)
      ASSERT_NEAR(back[i].image[j], d[i].image[j], 0.5f / 255.0f + 1e-6f);
  }
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_dataset_dir(dir.string()), Error);
}

TEST(Sgd, WorkedExample) {
  Parameter p = scalar("w", 1.0f, 1.0f);
  SgdState st;
  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.99;
  cfg.weight_decay = 5e-4;
  sgd_momentum_step({&p}, st, cfg);
  EXPECT_NEAR(st.velocity.at("w")[0], -0.10005, 1e-7);
  EXPECT_NEAR(p.value[0], 0.89995, 1e-7);
  // Second step carries momentum.
  p.grad[0] = 0.0f;
  sgd_momentum_step({&p}, st, cfg);
  const double v2 = 0.99 * -0.10005 - 0.1 * 5e-4 * 0.89995;
  EXPECT_NEAR(st.velocity.at("w")[0], v2, 1e-7);
  EXPECT_NEAR(p.value[0], 0.89995 + v2, 1e-6);
}

TEST(Sgd, PlainGradientDescentWithoutMomentumOrDecay) {
  Parameter p = scalar("w", 2.0f, 0.5f);
  SgdState st;
  SgdConfig cfg;
  cfg.lr = 0.2;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 3; ++i) sgd_momentum_step({&p}, st, cfg);
  EXPECT_NEAR(p.value[0], 2.0 - 3 * 0.1, 1e-6);
}

TEST(Sgd, NoDecayOnFlaggedParameters) {
  Parameter b = scalar("bias", 1.0f, 0.0f, false);
  Parameter w = scalar("weight", 1.0f, 0.0f, true);
  SgdState st;
  SgdConfig cfg;
  cfg.lr = 0.1;
  sgd_momentum_step({&b, &w}, st, cfg);
  EXPECT_EQ(b.value[0], 1.0f);
  EXPECT_LT(w.value[0], 1.0f);
}

TEST(Sgd, NonFiniteGradientNamesParameterAndLeavesWeights) {
  Parameter a = scalar("head.a", 1.0f, 1.0f);
  Parameter b = scalar("head.b", 1.0f, std::numeric_limits<float>::quiet_NaN());
  SgdState st;
  try {
    sgd_momentum_step({&a, &b}, st, SgdConfig{});
    FAIL() << "no throw";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("head.b"), std::string::npos) << e.what();
  }
  EXPECT_EQ(a.value[0], 1.0f);
  EXPECT_EQ(b.value[0], 1.0f);
}

TEST(Sgd, ValidatesConfig) {
  SgdConfig c;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.lr = -1.0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.lr = 0.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  SegModel m = toy_model(3, true, 1);
  std::vector<Tensor> before;
  for (Parameter* p : m.module().parameters()) before.push_back(p->value);
  SgdConfig cfg;
  cfg.lr = 0.0;
  TrainOptions o;
  o.epochs = 1;
  train(m, synth_shapes(1, 3, 32, 3), cfg, o);
  std::size_t i = 0;
  for (Parameter* p : m.module().parameters()) EXPECT_EQ(values(p->value), values(before[i++])) << p->name;
}

TEST(Train, OverfitsOneSample) {
  SegModel m = toy_model(3, true, 2);
  SgdConfig cfg;
  cfg.lr = 1e-2;
  cfg.momentum = 0.9;
  TrainOptions o;
  o.epochs = 30;
  o.augment = false;
  const TrainResult r = train(m, synth_shapes(4, 1, 32, 3), cfg, o);
  ASSERT_EQ(r.steps, 30);
  ASSERT_EQ(r.loss.size(), 30u);
  EXPECT_LT(r.loss.back(), 0.5 * r.loss.front());
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) first += r.loss[i], last += r.loss[20 + i];
  EXPECT_LT(last, first);
}

TEST(Train, SameSeedSameLossBytes) {
  const Dataset d = synth_shapes(5, 4, 32, 3);
  SgdConfig cfg;
  cfg.batch_size = 2;
  TrainOptions o;
  o.epochs = 2;
  o.seed = 9;
  SegModel a = toy_model(7, true, 3), b = toy_model(7, true, 3);
  const TrainResult ra = train(a, d, cfg, o), rb = train(b, d, cfg, o);
  ASSERT_EQ(ra.loss.size(), rb.loss.size());
  EXPECT_EQ(std::memcmp(ra.loss.data(), rb.loss.data(), ra.loss.size() * sizeof(double)), 0);
  auto pa = a.module().parameters(), pb = b.module().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(values(pa[i]->value), values(pb[i]->value));
}

TEST(Train, StepCallbackAndBatchCount) {
  SegModel m = toy_model(1, false, 4);
  SgdConfig cfg;
  cfg.batch_size = 2;
  TrainOptions o;
  o.epochs = 2;
  int calls = 0;
  o.on_step = [&](int, double) { ++calls; };
  const TrainResult r = train(m, synth_shapes(6, 5, 32, 3), cfg, o);
  EXPECT_EQ(r.steps, calls);
  EXPECT_EQ(r.steps, 2 * 3);  // ceil(5 / 2) per epoch
}

TEST(Train, DivergenceIsReported) {
  SegModel m = toy_model(3, true, 5);
  SgdConfig cfg;
  cfg.lr = 1e6;
  cfg.momentum = 0.0;
  TrainOptions o;
  o.epochs = 5;
  EXPECT_THROW(train(m, synth_shapes(7, 4, 32, 3), cfg, o), NumericalError);
}

TEST(Train, RejectsWrongCanvasOrClasses) {
  SegModel m = toy_model(3, true, 6);
  TrainOptions o;
  EXPECT_THROW(train(m, synth_shapes(8, 1, 64, 3), SgdConfig{}, o), InputError);
  Dataset bad = synth_shapes(8, 1, 32, 3);
  bad[0].label.at(0, 5, 5) = 3;
  EXPECT_THROW(train(m, bad, SgdConfig{}, o), InputError);
  EXPECT_THROW(train(m, Dataset{}, SgdConfig{}, o), InputError);
}
