#include "gcnkit/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "gcnkit/error.hpp"

namespace gcnkit {
namespace {

std::int64_t layer_params(const LayerSpec& l, const CountOptions& opts) {
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::deconv: {
      std::int64_t n = std::int64_t{l.ci} * l.co * l.kernel.h * l.kernel.w;
      if (l.bias && opts.include_bias) n += l.co;
      return n;
    }
    case LayerKind::batch_norm:
      return opts.include_bn ? 2 * std::int64_t{l.co} : 0;
    default:
      return 0;
  }
}

std::int64_t layer_macs(const LayerSpec& l, Hw in, Hw out) {
  const std::int64_t taps = std::int64_t{l.ci} * l.co * l.kernel.h * l.kernel.w;
  if (l.kind == LayerKind::conv) return taps * out.h * out.w;
  // Each input unit is scattered through the full kernel once.
  if (l.kind == LayerKind::deconv) return taps * in.h * in.w;
  return 0;
}

CountReport make_report(const LayerGraph& g, std::optional<Hw> input, const CountOptions& opts) {
  const RfReport rf = theoretical_rf(g);
  std::vector<Hw> extents;
  if (input) extents = g.spatial_extents(*input);
  CountReport r;
  for (int i = 1; i < g.size(); ++i) {
    const LayerSpec& l = g.layer(i);
    CountRow row;
    row.layer = l.name;
    row.kind = l.kind;
    row.params = layer_params(l, opts);
    if (input) {
      const Hw in = extents[static_cast<std::size_t>(l.inputs.front())];
      row.macs = layer_macs(l, in, extents[static_cast<std::size_t>(i)]);
    }
    const RfRow& rr = rf.rows[static_cast<std::size_t>(i - 1)];
    row.rf_h = rr.rf_h;
    row.rf_w = rr.rf_w;
    r.total_params += row.params;
    r.total_macs += row.macs;
    r.rows.push_back(std::move(row));
  }
  return r;
}

LayerGraph arch_graph(const ArchSpec& spec, std::optional<Hw> canvas) {
  if (!spec.head) return build_backbone_graph(spec).graph;
  SegConfig cfg = seg_config_from(*spec.head);
  if (canvas) cfg.canvas = *canvas;
  return build_seg_graph(spec, cfg);
}

// Floor division for possibly negative numerators (d > 0).
int floor_div(int a, int d) { return a >= 0 ? a / d : -((-a + d - 1) / d); }
int ceil_div(int a, int d) { return -floor_div(-a, d); }

struct Interval {
  int lo = 1;
  int hi = 0;
  bool empty() const { return hi < lo; }
  void hull(const Interval& o) {
    if (o.empty()) return;
    if (empty()) {
      *this = o;
    } else {
      lo = std::min(lo, o.lo);
      hi = std::max(hi, o.hi);
    }
  }
};

// Input interval reaching output interval `out` of layer l along one axis.
Interval map_back(const LayerSpec& l, Interval out, bool vertical) {
  const int k = vertical ? l.kernel.h : l.kernel.w;
  const int s = vertical ? l.stride.h : l.stride.w;
  const int p = vertical ? l.pad.h : l.pad.w;
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::max_pool:
      return {out.lo * s - p, out.hi * s - p + k - 1};
    case LayerKind::deconv:
      // Input i feeds outputs [i*s - p, i*s - p + k - 1].
      return {ceil_div(out.lo + p - k + 1, s), floor_div(out.hi + p, s)};
    default:
      return out;
  }
}

// Backward interval propagation from unit `u` of `layer` to the input.
// `extents` (per layer, this axis) clips every intermediate map when given.
Interval trace(const LayerGraph& g, int layer, int u, bool vertical, const std::vector<int>* extents) {
  std::vector<Interval> iv(static_cast<std::size_t>(layer + 1));
  iv[static_cast<std::size_t>(layer)] = {u, u};
  for (int i = layer; i >= 0; --i) {
    Interval cur = iv[static_cast<std::size_t>(i)];
    if (cur.empty()) continue;
    if (extents != nullptr) {
      cur.lo = std::max(cur.lo, 0);
      cur.hi = std::min(cur.hi, (*extents)[static_cast<std::size_t>(i)] - 1);
      if (cur.empty()) continue;
    }
    if (i == 0) return cur;
    const LayerSpec& l = g.layer(i);
    const Interval in = map_back(l, cur, vertical);
    for (int from : l.inputs) iv[static_cast<std::size_t>(from)].hull(in);
  }
  return {};
}

}  // namespace

CountReport count_params(const LayerGraph& graph, CountOptions opts) {
  return make_report(graph, std::nullopt, opts);
}

CountReport count_params(const GcnSpec& spec, CountOptions opts) {
  LayerGraph g(spec.ci);
  add_gcn(g, g.input(), spec, "gcn");
  return count_params(g, opts);
}

CountReport count_params(const TrivialSpec& spec, CountOptions opts) {
  LayerGraph g(spec.ci);
  add_trivial_conv(g, g.input(), spec.k, spec.co, "conv");
  return count_params(g, opts);
}

CountReport count_params(const StackSpec& spec, CountOptions opts) {
  LayerGraph g(spec.ci);
  add_conv_stack(g, g.input(), spec, "stack");
  return count_params(g, opts);
}

CountReport count_params(const BottleneckSpec& spec, CountOptions opts) {
  LayerGraph g(spec.ci);
  add_bottleneck(g, g.input(), spec, "bottleneck");
  return count_params(g, opts);
}

CountReport count_params(const ArchSpec& spec, CountOptions opts) {
  return count_params(arch_graph(spec, std::nullopt), opts);
}

CountReport count_flops(const LayerGraph& graph, Hw input, CountOptions opts) {
  return make_report(graph, input, opts);
}

CountReport count_flops(const ArchSpec& spec, Hw input, CountOptions opts) {
  return count_flops(arch_graph(spec, input), input, opts);
}

std::int64_t gcn_params(int k, int ci, int co) {
  return 2 * std::int64_t{k} * co * (std::int64_t{ci} + co);
}

std::int64_t trivial_params(int k, int ci, int co) {
  return std::int64_t{k} * k * ci * co;
}

std::int64_t stack_params(int k_eq, int m, int ci, int co) {
  const std::int64_t d = (k_eq - 1) / 2;
  if (d == 1) return 9 * std::int64_t{ci} * co;
  return 9 * (std::int64_t{ci} * m + (d - 2) * std::int64_t{m} * m + std::int64_t{m} * co);
}

std::string round_to_k(std::int64_t n) { return std::to_string((n + 500) / 1000) + "K"; }

const RfRow& RfReport::at(const std::string& layer) const {
  for (const RfRow& r : rows) {
    if (r.layer == layer) return r;
  }
  throw InputError("no layer named '" + layer + "'");
}

RfReport theoretical_rf(const LayerGraph& g) {
  const auto n = static_cast<std::size_t>(g.size());
  std::vector<double> jump_h(n, 1.0), jump_w(n, 1.0);
  std::vector<int> period_h(n, 1), period_w(n, 1);
  RfReport report;
  for (int i = 1; i < g.size(); ++i) {
    const LayerSpec& l = g.layer(i);
    const auto idx = static_cast<std::size_t>(i);
    const auto src = static_cast<std::size_t>(l.inputs.front());
    jump_h[idx] = jump_h[src];
    jump_w[idx] = jump_w[src];
    for (int from : l.inputs) {
      period_h[idx] = std::max(period_h[idx], period_h[static_cast<std::size_t>(from)]);
      period_w[idx] = std::max(period_w[idx], period_w[static_cast<std::size_t>(from)]);
    }
    if (l.kind == LayerKind::conv || l.kind == LayerKind::max_pool) {
      jump_h[idx] *= l.stride.h;
      jump_w[idx] *= l.stride.w;
    } else if (l.kind == LayerKind::deconv) {
      jump_h[idx] /= l.stride.h;
      jump_w[idx] /= l.stride.w;
      period_h[idx] = std::min(period_h[idx] * l.stride.h, 1024);
      period_w[idx] = std::min(period_w[idx] * l.stride.w, 1024);
    }
    RfRow row;
    row.layer = l.name;
    row.jump_h = jump_h[idx];
    row.jump_w = jump_w[idx];
    auto axis = [&](bool vertical, int period, int& rf, int& offset) {
      rf = 0;
      for (int u = 0; u < period; ++u) {
        const Interval iv = trace(g, i, u, vertical, nullptr);
        if (u == 0) offset = iv.lo;
        rf = std::max(rf, iv.hi - iv.lo + 1);
      }
    };
    axis(true, period_h[idx], row.rf_h, row.offset_h);
    axis(false, period_w[idx], row.rf_w, row.offset_w);
    report.rows.push_back(std::move(row));
  }
  return report;
}

RfReport theoretical_rf(const ArchSpec& spec) { return theoretical_rf(arch_graph(spec, std::nullopt)); }

Box rf_box(const LayerGraph& g, int layer, Hw input, int y, int x) {
  if (layer < 0 || layer >= g.size()) throw InputError("rf_box: unknown layer " + std::to_string(layer));
  const std::vector<Hw> ext = g.spatial_extents(input);
  const Hw out = ext[static_cast<std::size_t>(layer)];
  if (y < 0 || y >= out.h || x < 0 || x >= out.w) {
    throw InputError("rf_box: location (" + std::to_string(y) + ", " + std::to_string(x) +
                     ") outside the " + std::to_string(out.h) + "x" + std::to_string(out.w) +
                     " output of '" + g.layer(layer).name + "'");
  }
  std::vector<int> hs, ws;
  for (const Hw& e : ext) {
    hs.push_back(e.h);
    ws.push_back(e.w);
  }
  const Interval v = trace(g, layer, y, true, &hs);
  const Interval h = trace(g, layer, x, false, &ws);
  if (v.empty() || h.empty()) return Box{};
  return Box{v.lo, h.lo, v.hi, h.hi};
}

VrfResult empirical_vrf(const Module& model, const Tensor& input, int y, int x, int cls,
                        double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw InputError("vrf threshold must lie in (0, 1]");
  }
  Tape tape;
  Var in = tape.leaf(input);
  Var out = model.infer(in, {model.graph().last()}).front();
  const Shape os = out.shape();
  if (cls < 0 || cls >= os.c) {
    throw InputError("vrf class " + std::to_string(cls) + " outside [0, " + std::to_string(os.c) + ")");
  }
  if (y < 0 || y >= os.h || x < 0 || x >= os.w) {
    throw InputError("vrf location (" + std::to_string(y) + ", " + std::to_string(x) +
                     ") outside the " + std::to_string(os.h) + "x" + std::to_string(os.w) +
                     " score map");
  }
  if (!out.requires_grad()) throw NumericalError("dead probe: output does not depend on the input");
  Tensor seed(os);
  seed.at(0, cls, y, x) = 1.0f;
  tape.backward(out, seed);

  const Shape is = input.shape();
  VrfResult r;
  r.threshold = threshold;
  r.heatmap = Tensor(Shape{1, 1, is.h, is.w});
  const Tensor& g = in.grad();
  float peak = 0.0f;
  if (!g.empty()) {
    for (int c = 0; c < is.c; ++c) {
      for (int h = 0; h < is.h; ++h) {
        for (int w = 0; w < is.w; ++w) r.heatmap.at(0, 0, h, w) += std::fabs(g.at(0, c, h, w));
      }
    }
    for (float v : r.heatmap.data()) peak = std::max(peak, v);
  }
  if (!(peak > 0.0f) || !std::isfinite(peak)) {
    throw NumericalError("dead probe: zero input gradient at (" + std::to_string(y) + ", " +
                         std::to_string(x) + ")");
  }
  const float cut = static_cast<float>(threshold * peak);
  r.mask.assign(static_cast<std::size_t>(is.h) * is.w, 0);
  r.bbox = Box{is.h, is.w, -1, -1};
  for (int h = 0; h < is.h; ++h) {
    for (int w = 0; w < is.w; ++w) {
      if (r.heatmap.at(0, 0, h, w) < cut) continue;
      r.mask[static_cast<std::size_t>(h) * is.w + w] = 1;
      ++r.area;
      r.bbox.y0 = std::min(r.bbox.y0, h);
      r.bbox.x0 = std::min(r.bbox.x0, w);
      r.bbox.y1 = std::max(r.bbox.y1, h);
      r.bbox.x1 = std::max(r.bbox.x1, w);
    }
  }
  return r;
}

VrfResult empirical_vrf(const SegModel& model, const Tensor& input, int y, int x, int cls,
                        double threshold) {
  return empirical_vrf(model.module(), input, y, x, cls, threshold);
}

std::vector<std::int64_t> vrf_area_curve(const Tensor& heatmap, const std::vector<double>& ts) {
  float peak = 0.0f;
  for (float v : heatmap.data()) peak = std::max(peak, v);
  std::vector<std::int64_t> areas;
  for (double t : ts) {
    const float cut = static_cast<float>(t * peak);
    std::int64_t a = 0;
    for (float v : heatmap.data()) a += (peak > 0.0f && v >= cut) ? 1 : 0;
    areas.push_back(a);
  }
  return areas;
}

}  // namespace gcnkit
