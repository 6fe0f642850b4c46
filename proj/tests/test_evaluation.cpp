#include <cmath>
#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "gcnkit/data.hpp"
#include "gcnkit/error.hpp"
#include "gcnkit/evaluation.hpp"
#include "test_util.hpp"

using namespace gcnkit;
using gcnkit::test::random_tensor;

namespace {

LabelMap labels(int h, int w, std::vector<std::int32_t> v) {
  LabelMap m(1, h, w);
  m.data = std::move(v);
  return m;
}

LabelMap random_labels(int n, int h, int w, int classes, std::uint64_t seed, double ignore_p = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> c(0, classes - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMap m(n, h, w);
  for (auto& v : m.data) v = u(rng) < ignore_p ? kIgnoreLabel : c(rng);
  return m;
}

// Nearest differently labeled valid pixel, by exhaustive scan.
std::vector<std::uint8_t> brute_boundary(const LabelMap& gt, double d) {
  std::vector<std::uint8_t> out(gt.size(), 0);
  for (int b = 0; b < gt.n; ++b)
    for (int y = 0; y < gt.h; ++y)
      for (int x = 0; x < gt.w; ++x) {
        const std::int32_t l = gt.at(b, y, x);
        if (l == kIgnoreLabel) continue;
        double best = std::numeric_limits<double>::infinity();
        for (int yy = 0; yy < gt.h; ++yy)
          for (int xx = 0; xx < gt.w; ++xx) {
            const std::int32_t o = gt.at(b, yy, xx);
            if (o == kIgnoreLabel || o == l) continue;
            best = std::min(best, std::hypot(yy - y, xx - x));
          }
        out[(static_cast<std::size_t>(b) * gt.h + y) * gt.w + x] = best <= d;
      }
  return out;
}

SegModel small_model(int k, std::uint64_t seed) {
  SegConfig c;
  c.classes = 3;
  c.k = k;
  c.canvas = {32, 32};
  SegModel m(builtin_arch(BackboneVariant::tiny), c);
  m.init(seed);
  return m;
}

}  // namespace

TEST(MeanIou, PerfectPrediction) {
  const LabelMap gt = random_labels(2, 5, 6, 4, 1);
  const MetricsReport r = mean_iou(gt, gt, 4);
  EXPECT_DOUBLE_EQ(r.miou, 1.0);
  EXPECT_EQ(r.valid_pixels, 60);
}

TEST(MeanIou, TwoByTwoExample) {
  const MetricsReport r = mean_iou(labels(2, 2, {0, 1, 1, 1}), labels(2, 2, {0, 0, 1, 1}), 2);
  ASSERT_TRUE(r.per_class_iou[0] && r.per_class_iou[1]);
  EXPECT_DOUBLE_EQ(*r.per_class_iou[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class_iou[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.miou, 7.0 / 12.0);
}

TEST(MeanIou, AbsentClassesAreSkippedAndIgnoreIsDropped) {
  const LabelMap gt = labels(1, 4, {0, 0, kIgnoreLabel, 1});
  const LabelMap pred = labels(1, 4, {0, 0, 2, 1});
  const MetricsReport r = mean_iou(pred, gt, 4);
  EXPECT_EQ(r.valid_pixels, 3);
  EXPECT_FALSE(r.per_class_iou[2]);
  EXPECT_FALSE(r.per_class_iou[3]);
  EXPECT_DOUBLE_EQ(r.miou, 1.0);
  EXPECT_THROW(mean_iou(pred, labels(1, 4, {255, 255, 255, 255}), 4), InputError);
}

TEST(MeanIou, ConfusionMatrixMatchesBruteForce) {
  const LabelMap gt = random_labels(2, 7, 9, 5, 2, 0.1), pred = random_labels(2, 7, 9, 5, 3);
  ConfusionMatrix cm(5);
  cm.add(pred, gt);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < 5; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.data[i] == kIgnoreLabel) continue;
      tp += gt.data[i] == c && pred.data[i] == c;
      fp += gt.data[i] != c && pred.data[i] == c;
      fn += gt.data[i] == c && pred.data[i] != c;
    }
    if (tp + fp + fn == 0) continue;
    sum += static_cast<double>(tp) / (tp + fp + fn);
    ++present;
  }
  EXPECT_NEAR(mean_iou(cm).miou, sum / present, 1e-12);
}

TEST(MeanIou, InvariantToPixelPermutationAndRelabeling) {
  const LabelMap gt = random_labels(1, 6, 8, 4, 4), pred = random_labels(1, 6, 8, 4, 5);
  const double base = mean_iou(pred, gt, 4).miou;

  std::vector<std::size_t> perm(gt.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(6));
  LabelMap g2 = gt, p2 = pred;
  for (std::size_t i = 0; i < perm.size(); ++i) g2.data[i] = gt.data[perm[i]], p2.data[i] = pred.data[perm[i]];
  EXPECT_NEAR(mean_iou(p2, g2, 4).miou, base, 1e-12);

  const std::int32_t relabel[4] = {2, 0, 3, 1};
  for (auto& v : g2.data) v = relabel[v];
  for (auto& v : p2.data) v = relabel[v];
  EXPECT_NEAR(mean_iou(p2, g2, 4).miou, base, 1e-12);
}

TEST(Regions, UniformMapHasNoBoundary) {
  const RegionMasks m = boundary_internal_masks(LabelMap(1, 9, 9, 2));
  for (std::size_t i = 0; i < m.boundary.size(); ++i) {
    EXPECT_EQ(m.boundary[i], 0);
    EXPECT_EQ(m.internal[i], 1);
  }
}

TEST(Regions, ColumnEdge) {
  const int h = 5, w = 40, c = 17;
  LabelMap gt(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = c; x < w; ++x) gt.at(0, y, x) = 1;
  const RegionMasks m = boundary_internal_masks(gt, 7.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool near = x < c ? c - x <= 7 : x - (c - 1) <= 7;
      EXPECT_EQ(m.boundary[static_cast<std::size_t>(y) * w + x], near) << x;
    }
}

TEST(Regions, MatchesBruteForceAndPartitionsValidPixels) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    // Blocky maps so both regions are populated.
    LabelMap gt(2, 14, 17);
    const LabelMap coarse = random_labels(2, 4, 5, 3, seed, 0.15);
    for (int b = 0; b < 2; ++b)
      for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 17; ++x) gt.at(b, y, x) = coarse.at(b, y / 4, x / 4);
    for (double d : {1.0, 2.5, 7.0}) {
      const RegionMasks m = boundary_internal_masks(gt, d);
      EXPECT_EQ(m.boundary, brute_boundary(gt, d)) << "seed " << seed << " d " << d;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool valid = gt.data[i] != kIgnoreLabel;
        ASSERT_EQ(m.boundary[i] + m.internal[i], valid ? 1 : 0);
      }
    }
  }
}

TEST(Regions, ZeroDistanceIsEmptyAndGrowthIsMonotone) {
  const LabelMap gt = random_labels(1, 12, 12, 3, 9, 0.1);
  const RegionMasks zero = boundary_internal_masks(gt, 0.0);
  for (std::uint8_t v : zero.boundary) EXPECT_EQ(v, 0);
  std::vector<std::uint8_t> prev = zero.boundary;
  for (double d : {0.5, 1.0, 1.5, 2.0, 3.0, 7.0}) {
    const RegionMasks m = boundary_internal_masks(gt, d);
    for (std::size_t i = 0; i < prev.size(); ++i) ASSERT_LE(prev[i], m.boundary[i]) << "d " << d;
    prev = m.boundary;
  }
}

TEST(Regions, ChebyshevIsWider) {
  LabelMap gt(1, 9, 9);
  gt.at(0, 4, 4) = 1;
  const RegionMasks e = boundary_internal_masks(gt, 2.0);
  const RegionMasks c = boundary_internal_masks(gt, 2.0, DistanceMetric::chebyshev);
  EXPECT_EQ(e.boundary[2 * 9 + 2], 0);  // (2,2) is 2*sqrt(2) away
  EXPECT_EQ(c.boundary[2 * 9 + 2], 1);
}

TEST(Regions, Accuracy) {
  const LabelMap gt = labels(1, 4, {0, 1, 1, 0}), pred = labels(1, 4, {0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(region_accuracy(pred, gt, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(region_accuracy(pred, gt, {1, 1, 1, 1}), 0.5);
  EXPECT_THROW(region_accuracy(pred, gt, {0, 0, 0, 0}), InputError);
}

TEST(Multiscale, SingleScaleIsSoftmaxOfForward) {
  const SegModel m = small_model(3, 1);
  const Tensor x = random_tensor({1, 3, 32, 32}, 2);
  const Tensor scores = m.predict(x);
  const Tensor probs = multiscale_inference(m, x, {1.0});
  ASSERT_EQ(probs.shape(), scores.shape());
  for (int y = 0; y < 32; ++y)
    for (int xx = 0; xx < 32; ++xx) {
      double z = 0.0;
      for (int c = 0; c < 3; ++c) z += std::exp(static_cast<double>(scores.at(0, c, y, xx)));
      for (int c = 0; c < 3; ++c)
        ASSERT_NEAR(probs.at(0, c, y, xx), std::exp(static_cast<double>(scores.at(0, c, y, xx))) / z, 1e-5);
    }
}

TEST(Multiscale, SeveralScalesGiveDistributionsAtInputSize) {
  const SegModel m = small_model(7, 3);
  const Tensor x = random_tensor({1, 3, 32, 32}, 4);
  const Tensor p = multiscale_inference(m, x, {0.75, 1.0, 1.25});
  EXPECT_EQ(p.shape(), (Shape{1, 3, 32, 32}));
  for (int y = 0; y < 32; ++y)
    for (int xx = 0; xx < 32; ++xx) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        ASSERT_GE(p.at(0, c, y, xx), 0.0f);
        s += p.at(0, c, y, xx);
      }
      ASSERT_NEAR(s, 1.0, 1e-5);
    }
  EXPECT_THROW(multiscale_inference(m, x, {}), InputError);
  EXPECT_THROW(multiscale_inference(m, x, {0.0}), InputError);
}

TEST(Evaluate, ReportsBothRegionsAndIsDeterministic) {
  const SegModel m = small_model(3, 5);
  const Dataset d = synth_shapes(7, 3, 32, 3);
  const MetricsReport a = evaluate(m, d), b = evaluate(m, d);
  ASSERT_TRUE(a.boundary_acc && a.internal_acc);
  EXPECT_GT(a.boundary_pixels, 0);
  EXPECT_GT(a.internal_pixels, 0);
  EXPECT_EQ(a.boundary_pixels + a.internal_pixels, a.valid_pixels);
  EXPECT_EQ(a.miou, b.miou);
  EXPECT_EQ(*a.boundary_acc, *b.boundary_acc);

  // Same numbers as assembling the pieces by hand.
  ConfusionMatrix cm(3);
  for (const SegSample& s : d) cm.add(predict_labels(m, subtract_mean(s).image), s.label);
  EXPECT_NEAR(mean_iou(cm).miou, a.miou, 1e-12);
}
