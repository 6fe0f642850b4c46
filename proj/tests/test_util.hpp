#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gcnkit/analysis.hpp"
#include "gcnkit/blocks.hpp"
#include "gcnkit/module.hpp"
#include "gcnkit/network.hpp"
#include "gcnkit/ops.hpp"
#include "gcnkit/tensor.hpp"

namespace gcnkit::test {

inline std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Tensor random_tensor(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(s);
  for (float& v : t.data()) v = u(rng);
  return t;
}

// Direct nested-loop cross-correlation, accumulated in double. Independent of
// the im2col path in the library.
inline Tensor naive_conv(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = (xs.h + 2 * ph - ws.h) / sh + 1;
  const int ow = (xs.w + 2 * pw - ws.w) / sw + 1;
  Tensor out({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (int c = 0; c < xs.c; ++c)
            for (int i = 0; i < ws.h; ++i)
              for (int j = 0; j < ws.w; ++j) {
                const int iy = y * sh - ph + i, ix = xx * sw - pw + j;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += static_cast<double>(x.at(n, c, iy, ix)) * w.at(o, c, i, j);
              }
          out.at(n, o, y, xx) = static_cast<float>(acc);
        }
  return out;
}

// Full segmentation net (GCN head, BR, fusion, final upsampling) on a
// two-stage backbone small enough for whole-model finite differences:
// strides 2 and 4, so an 8x8 canvas gives 4x4 and 2x2 feature maps.
inline ArchSpec small_arch() {
  return parse_arch(
      "input channels=3\n"
      "conv stem k=3 out=4 stride=2\n"
      "stage s1 repeat=1 block=plain out=4 stride=1\n"
      "stage s2 repeat=1 block=plain out=6 stride=2\n");
}

inline SegModel small_segnet(int k, int classes, bool br, int canvas, std::uint64_t seed) {
  SegConfig c;
  c.classes = classes;
  c.k = k;
  c.use_br = br;
  c.canvas = {canvas, canvas};
  SegModel m(small_arch(), c);
  init_weights(m, seed);
  return m;
}

// Zero-initialized weights (second BR convolutions) hide the gradient of
// whatever sits in front of them; give them small random values.
inline void wake_zero_weights(Module& m, std::uint64_t seed) {
  int i = 0;
  for (Parameter* p : m.parameters()) {
    ++i;
    if (p->name.find(".weight") == std::string::npos) continue;
    if (std::any_of(p->value.data().begin(), p->value.data().end(), [](float v) { return v != 0.0f; })) continue;
    std::mt19937_64 rng(seed + 131 * i);
    std::normal_distribution<float> nd(0.0f, 0.3f);
    for (float& v : p->value.data()) v = nd(rng);
  }
}

// Random 3-6 layer chain of convolutions, max pools and GCN blocks with at
// most three stride-2 layers.
inline Module random_chain(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int depth = pick(3, 6);
  LayerGraph g(pick(1, 2));
  int x = g.input();
  int strided = 0;
  for (int i = 0; i < depth; ++i) {
    const std::string name = "l" + std::to_string(i);
    const int stride = strided < 3 && pick(0, 2) == 0 ? 2 : 1;
    strided += stride == 2;
    switch (pick(0, 2)) {
      case 0: {
        const int k = 2 * pick(0, 3) + 1;
        const int pad = pick(0, (k - 1) / 2);
        x = g.conv(name, x, pick(1, 3), {k, k}, {stride, stride}, {pad, pad});
        break;
      }
      case 1: {
        const int k = pick(2, 3);
        x = g.max_pool(name, x, k, stride, pick(0, k / 2));
        break;
      }
      default:
        x = add_gcn(g, x, GcnSpec{2 * pick(1, 3) + 1, g.channels(x), pick(1, 3), false}, name);
        break;
    }
  }
  Module m(std::move(g));
  int i = 0;
  for (Parameter* p : m.parameters()) p->value = random_tensor(p->value.shape(), seed * 31 + i++);
  return m;
}

// Bounding box of input pixels with a nonzero gradient of output unit
// (channel 0, y, x), unioned over several random inputs so every max-pool
// window position gets to win at least once.
inline Box gradient_support(Module& m, Hw in, int y, int x, int trials, std::uint64_t seed) {
  Box box;
  bool any = false;
  for (int t = 0; t < trials; ++t) {
    Tape tape;
    Var leaf = tape.leaf(random_tensor({1, m.graph().in_channels(), in.h, in.w}, seed + t));
    Var out = m.forward(&tape, leaf, false);
    Tensor probe(out.shape());
    probe.at(0, 0, y, x) = 1.0f;
    tape.backward(out, probe);
    const Tensor& g = leaf.grad();
    for (int c = 0; c < g.shape().c; ++c)
      for (int i = 0; i < in.h; ++i)
        for (int j = 0; j < in.w; ++j) {
          if (g.at(0, c, i, j) == 0.0f) continue;
          if (!any) {
            box = {i, j, i, j};
            any = true;
          }
          box = {std::min(box.y0, i), std::min(box.x0, j), std::max(box.y1, i), std::max(box.x1, j)};
        }
  }
  return box;
}

}  // namespace gcnkit::test
