#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "gcnkit/analysis.hpp"
#include "gcnkit/error.hpp"
#include "test_util.hpp"

using namespace gcnkit;
using gcnkit::test::gradient_support;
using gcnkit::test::random_chain;
using gcnkit::test::random_tensor;

namespace {

ArchSpec body(BackboneVariant v) {
  ArchSpec a = builtin_arch(v);
  a.head.reset();
  return a;
}

bool has_pool(const LayerGraph& g) {
  return std::any_of(g.layers().begin(), g.layers().end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::max_pool; });
}

}  // namespace

TEST(Counts, ClosedFormExamples) {
  EXPECT_EQ(count_params(GcnSpec{3, 2048, 21}).total_params, 260694);
  EXPECT_EQ(count_params(TrivialSpec{3, 2048, 21}).total_params, 387072);
  EXPECT_EQ(count_params(StackSpec{7, 1024, 2048, 21}).total_params, 28505088);
  EXPECT_EQ(count_params(StackSpec{7, 2048, 2048, 21}).total_params, 75884544);
  EXPECT_EQ(count_params(StackSpec{7, 210, 2048, 21}).total_params, 4307310);
  for (int k : {3, 5, 7, 9}) {
    EXPECT_EQ(count_params(GcnSpec{k, 2048, 21}).total_params, gcn_params(k, 2048, 21));
    EXPECT_EQ(count_params(TrivialSpec{k, 2048, 21}).total_params, trivial_params(k, 2048, 21));
  }
}

// Every printed figure but one; the k=3 GCN entry is printed truncated and
// is checked by the acceptance binary.
TEST(Counts, PrintedCountsRoundToNearest) {
  EXPECT_EQ(round_to_k(count_params(GcnSpec{5, 2048, 21}).total_params), "434K");
  EXPECT_EQ(round_to_k(count_params(GcnSpec{7, 2048, 21}).total_params), "608K");
  EXPECT_EQ(round_to_k(count_params(GcnSpec{9, 2048, 21}).total_params), "782K");
  EXPECT_EQ(round_to_k(count_params(TrivialSpec{3, 2048, 21}).total_params), "387K");
  EXPECT_EQ(round_to_k(count_params(TrivialSpec{5, 2048, 21}).total_params), "1075K");
  EXPECT_EQ(round_to_k(count_params(TrivialSpec{7, 2048, 21}).total_params), "2107K");
  EXPECT_EQ(round_to_k(count_params(TrivialSpec{9, 2048, 21}).total_params), "3484K");
  EXPECT_EQ(round_to_k(count_params(StackSpec{7, 2048, 2048, 21}).total_params), "75885K");
  EXPECT_EQ(round_to_k(count_params(StackSpec{7, 1024, 2048, 21}).total_params), "28505K");
  EXPECT_EQ(round_to_k(count_params(StackSpec{7, 210, 2048, 21}).total_params), "4307K");
}

TEST(Counts, RoundToK) {
  EXPECT_EQ(round_to_k(260694), "261K");
  EXPECT_EQ(round_to_k(260499), "260K");
  EXPECT_EQ(round_to_k(260500), "261K");
  EXPECT_EQ(round_to_k(499), "0K");
}

TEST(Counts, BiasAndBnFlags) {
  const GcnSpec g{3, 8, 4};
  EXPECT_EQ(count_params(g, {true, false}).total_params - count_params(g).total_params, 4 * 4);
  LayerGraph bn(2);
  bn.batch_norm("bn", bn.conv("c", bn.input(), 3, {3, 3}, {1, 1}, {1, 1}));
  EXPECT_EQ(count_params(bn).total_params, 54);
  EXPECT_EQ(count_params(bn, {false, true}).total_params, 54 + 6);
}

TEST(Flops, OneByOneConvIsOneMac) {
  LayerGraph g(1);
  g.conv("c", g.input(), 1, {1, 1});
  EXPECT_EQ(count_flops(g, {1, 1}).total_macs, 1);
}

TEST(Flops, ConvFormulaAndFreeLayers) {
  LayerGraph g(3);
  const int c = g.conv("c", g.input(), 5, {3, 3}, {2, 2}, {1, 1});
  g.max_pool("p", g.relu("r", g.batch_norm("bn", c)), 2, 2);
  const CountReport r = count_flops(g, {10, 12});
  EXPECT_EQ(r.total_macs, 5LL * 5 * 6 * 3 * 9);
  for (const CountRow& row : r.rows)
    if (row.kind != LayerKind::conv) {
      EXPECT_EQ(row.macs, 0) << row.layer;
    }
}

TEST(Flops, Resnet50Near3700) {
  const double a = count_flops(body(BackboneVariant::resnet50), {224, 224}).total_macs / 1e6;
  const double b = count_flops(body(BackboneVariant::resnet50_gcn), {224, 224}).total_macs / 1e6;
  EXPECT_NEAR(a, 3700.0, 370.0);
  EXPECT_LE(std::abs(a - b) / std::max(a, b), 0.10);
}

TEST(Flops, TotalsAreSumOfParts) {
  for (BackboneVariant v : {BackboneVariant::tiny, BackboneVariant::resnet50_gcn}) {
    const CountReport r = count_flops(builtin_arch(v), {224, 224}, {true, true});
    std::int64_t p = 0, m = 0;
    for (const CountRow& row : r.rows) p += row.params, m += row.macs;
    EXPECT_EQ(p, r.total_params);
    EXPECT_EQ(m, r.total_macs);
  }
}

TEST(Flops, GraphAndParameterCountsAgree) {
  SegConfig c;
  c.classes = 5;
  c.k = 7;
  c.canvas = {64, 64};
  SegModel m(builtin_arch(BackboneVariant::tiny), c);
  EXPECT_EQ(count_params(m.graph(), {true, true}).total_params,
            static_cast<std::int64_t>(m.module().parameter_count()));
}

TEST(Rf, Examples) {
  LayerGraph two(1);
  two.conv("b", two.conv("a", two.input(), 1, {3, 3}), 1, {3, 3});
  EXPECT_EQ(theoretical_rf(two).rows.back().rf_h, 5);
  EXPECT_EQ(theoretical_rf(two).rows.back().rf_w, 5);

  LayerGraph gcn(2);
  add_gcn(gcn, gcn.input(), GcnSpec{7, 2, 2}, "g");
  EXPECT_EQ(theoretical_rf(gcn).rows.back().rf_h, 7);
  EXPECT_EQ(theoretical_rf(gcn).rows.back().rf_w, 7);

  LayerGraph mixed(1);
  int x = mixed.conv("c7", mixed.input(), 1, {7, 7}, {2, 2}, {3, 3});
  x = mixed.max_pool("p", x, 3, 2, 1);
  mixed.conv("c3", x, 1, {3, 3}, {1, 1}, {1, 1});
  EXPECT_EQ(theoretical_rf(mixed).rows.back().rf_h, 19);
}

TEST(Rf, ConvPoolConvMatchesBruteForce) {
  LayerGraph g(1);
  int x = g.conv("c7", g.input(), 1, {7, 7}, {2, 2}, {3, 3});
  x = g.max_pool("p", x, 3, 2, 1);
  g.conv("c3", x, 1, {3, 3}, {1, 1}, {1, 1});
  Module m(std::move(g));
  int i = 0;
  for (Parameter* p : m.parameters()) p->value = random_tensor(p->value.shape(), 50 + i++);
  const Box b = gradient_support(m, {64, 64}, 8, 8, 24, 7);
  EXPECT_EQ(b.height(), 19);
  EXPECT_EQ(b.width(), 19);
}

TEST(Rf, MonotoneAlongEveryEdge) {
  SegConfig c;
  c.classes = 21;
  c.k = 15;
  c.canvas = {512, 512};
  const LayerGraph g = build_seg_graph(builtin_arch(BackboneVariant::resnet50_gcn), c);
  const RfReport r = theoretical_rf(g);
  for (int id = 1; id < g.size(); ++id) {
    const RfRow& row = r.rows[static_cast<std::size_t>(id - 1)];
    for (int from : g.layer(id).inputs) {
      if (from == 0) continue;
      const RfRow& prev = r.rows[static_cast<std::size_t>(from - 1)];
      EXPECT_GE(row.rf_h, prev.rf_h) << row.layer;
      EXPECT_GE(row.rf_w, prev.rf_w) << row.layer;
    }
  }
}

// The theoretical field of the last layer, placed at an interior output
// unit, is exactly the bounding box of input pixels that can move it.
class RandomChain : public ::testing::TestWithParam<int> {};

TEST_P(RandomChain, TheoreticalRfEqualsGradientSupport) {
  Module m = random_chain(1000 + GetParam());
  const LayerGraph& g = m.graph();
  const RfReport rf = theoretical_rf(g);
  const RfRow& row = rf.rows.back();
  const int jump_h = static_cast<int>(row.jump_h), jump_w = static_cast<int>(row.jump_w);
  const Hw in{row.rf_h + 2 * std::abs(row.offset_h) + 6 * jump_h + 4,
              row.rf_w + 2 * std::abs(row.offset_w) + 6 * jump_w + 4};
  const Hw out = g.spatial_extents(in).back();
  const int y = out.h / 2, x = out.w / 2;
  const int top = row.offset_h + y * jump_h, left = row.offset_w + x * jump_w;
  ASSERT_GE(top, 0);
  ASSERT_LE(top + row.rf_h - 1, in.h - 1);
  ASSERT_GE(left, 0);
  ASSERT_LE(left + row.rf_w - 1, in.w - 1);

  const int trials = has_pool(g) ? 200 : 1;
  const Box support = gradient_support(m, in, y, x, trials, 77);
  EXPECT_EQ(support, (Box{top, left, top + row.rf_h - 1, left + row.rf_w - 1}));
  EXPECT_EQ(rf_box(g, g.last(), in, y, x), support);

  // Corners, where padding clips the field.
  for (auto [cy, cx] : {std::pair{0, 0}, std::pair{out.h - 1, out.w - 1}}) {
    EXPECT_EQ(rf_box(g, g.last(), in, cy, cx), gradient_support(m, in, cy, cx, trials, 91))
        << "corner " << cy << "," << cx;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomChain, ::testing::Range(0, 12));

TEST(Vrf, MaskInsideTheoreticalRf) {
  for (int seed = 0; seed < 6; ++seed) {
    Module m = random_chain(2000 + seed);
    const Hw in{48, 48};
    const Hw out = m.graph().spatial_extents(in).back();
    const Tensor x = random_tensor({1, m.graph().in_channels(), in.h, in.w}, seed);
    const int y = out.h / 2, xx = out.w / 3;
    const VrfResult v = empirical_vrf(m, x, y, xx, 0);
    EXPECT_TRUE(rf_box(m.graph(), m.graph().last(), in, y, xx).contains(v.bbox)) << "seed " << seed;
    EXPECT_GT(v.area, 0);
  }
}

TEST(Vrf, LinearModelHeatmapIsComposedKernel) {
  LayerGraph g(1);
  g.conv("b", g.conv("a", g.input(), 1, {3, 3}, {1, 1}, {1, 1}), 1, {3, 3}, {1, 1}, {1, 1});
  Module m(std::move(g));
  const Tensor w1 = random_tensor({1, 1, 3, 3}, 1), w2 = random_tensor({1, 1, 3, 3}, 2);
  m.parameter("a.weight").value = w1;
  m.parameter("b.weight").value = w2;
  const int y = 8, x = 7;
  const VrfResult v = empirical_vrf(m, random_tensor({1, 1, 17, 17}, 3), y, x, 0);
  for (int i = 0; i < 17; ++i)
    for (int j = 0; j < 17; ++j) {
      const int di = i - (y - 2), dj = j - (x - 2);
      double k = 0.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const int p = di - a, q = dj - b;
          if (p < 0 || q < 0 || p > 2 || q > 2) continue;
          k += static_cast<double>(w2.at(0, 0, a, b)) * w1.at(0, 0, p, q);
        }
      EXPECT_NEAR(v.heatmap.at(0, 0, i, j), std::abs(k), 1e-6) << i << "," << j;
    }
}

TEST(Vrf, DeadProbeAndAreaCurve) {
  LayerGraph g(1);
  g.conv("a", g.input(), 1, {3, 3}, {1, 1}, {1, 1});
  Module m(std::move(g));
  m.parameter("a.weight").value.fill(0.0f);
  EXPECT_THROW(empirical_vrf(m, random_tensor({1, 1, 8, 8}, 1), 4, 4, 0), NumericalError);

  Tensor heat({1, 1, 2, 2});
  heat[0] = 1.0f, heat[1] = 0.5f, heat[2] = 0.1f, heat[3] = 0.0f;
  EXPECT_EQ(vrf_area_curve(heat, {0.0, 0.1, 0.5, 0.6, 1.0}), (std::vector<std::int64_t>{4, 3, 2, 1, 1}));
}

TEST(Vrf, LargeHeadKernelWidensField) {
  std::vector<std::int64_t> small, large;
  for (int seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({1, 3, 128, 128}, 100 + seed);
    for (int k : {3, 15}) {
      SegConfig c;
      c.classes = 5;
      c.k = k;
      c.canvas = {128, 128};
      SegModel m(builtin_arch(BackboneVariant::tiny), c);
      init_weights(m, seed);
      (k == 3 ? small : large).push_back(empirical_vrf(m, x, 64, 64, 1).area);
    }
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  EXPECT_GE(large[2], small[2]);
}
