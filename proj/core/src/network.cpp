#include "gcnkit/network.hpp"

#include <algorithm>

#include "gcnkit/error.hpp"

namespace gcnkit {

BackboneGraph build_backbone_graph(const ArchSpec& spec) {
  if (spec.stages.empty()) throw InputError("architecture has no stages");
  BackboneGraph bb{LayerGraph(spec.in_channels), {}, {}, {}, {}};
  LayerGraph& g = bb.graph;
  int x = g.input();
  for (const StemLayer& s : spec.stem) {
    const int pad = s.effective_pad();
    if (s.kind == StemLayer::Kind::conv) {
      x = add_conv_bn_relu(g, x, s.out, {s.k, s.k}, {s.stride, s.stride}, {pad, pad}, s.name);
    } else {
      x = g.max_pool(s.name, x, s.k, s.stride, pad);
    }
  }
  bb.stage_strides = stage_strides(spec);
  for (const StageSpec& st : spec.stages) {
    for (int r = 0; r < st.repeat; ++r) {
      const int stride = r == 0 ? st.stride : 1;
      const std::string name = st.name + "." + std::to_string(r + 1);
      switch (st.block) {
        case StageBlock::plain:
          x = add_conv_bn_relu(g, x, st.out, {3, 3}, {stride, stride}, {1, 1}, name);
          break;
        case StageBlock::bottleneck:
        case StageBlock::bottleneck_gcn: {
          BottleneckSpec b;
          b.variant = st.block == StageBlock::bottleneck ? BottleneckVariant::resnet
                                                         : BottleneckVariant::resnet_gcn;
          b.ci = g.channels(x);
          b.mid = st.mid;
          b.co = st.out;
          b.stride = stride;
          b.k = st.k;
          x = add_bottleneck(g, x, b, name);
          break;
        }
      }
    }
    g.mark("stage:" + st.name, x);
    bb.stage_names.push_back(st.name);
    bb.stage_layers.push_back(x);
    bb.stage_channels.push_back(g.channels(x));
  }
  return bb;
}

Module build_backbone(const ArchSpec& spec) { return Module(build_backbone_graph(spec).graph); }

Module build_backbone(BackboneVariant variant) { return build_backbone(builtin_arch(variant)); }

SegConfig seg_config_from(const HeadSpec& head) {
  SegConfig c;
  c.classes = head.classes;
  c.head = head.kind;
  c.k = head.k;
  c.use_br = head.br;
  c.stack_m = head.m;
  c.fusion_br = head.fusion_br;
  return c;
}

namespace {

std::vector<int> head_kernels(const BackboneGraph& bb, const SegConfig& cfg) {
  if (cfg.k < 1 || cfg.k % 2 == 0) {
    throw InputError("head kernel k must be odd and >= 1, got " + std::to_string(cfg.k));
  }
  const int out_stride = bb.stage_strides.back();
  if (cfg.canvas.h % out_stride != 0 || cfg.canvas.w % out_stride != 0) {
    throw InputError("canvas " + std::to_string(cfg.canvas.h) + "x" + std::to_string(cfg.canvas.w) +
                     " is not a multiple of the output stride " + std::to_string(out_stride));
  }
  const int k = cfg.head == HeadKind::pointwise ? 1 : cfg.k;
  std::vector<int> kernels;
  for (std::size_t i = 0; i < bb.stage_strides.size(); ++i) {
    const int extent = std::min(cfg.canvas.h, cfg.canvas.w) / bb.stage_strides[i];
    const int limit = 2 * extent - 1;
    if (i == 0 && k > limit) {
      throw InputError("head kernel k=" + std::to_string(k) + " exceeds the global limit " +
                       std::to_string(limit) + " of the " + std::to_string(extent) + "x" +
                       std::to_string(extent) + " feature map at stage '" + bb.stage_names[i] +
                       "'");
    }
    kernels.push_back(std::min(k, limit));
  }
  return kernels;
}

LayerGraph build_head(const BackboneGraph& bb, const SegConfig& cfg,
                      const std::vector<int>& kernels) {
  if (cfg.classes < 2) throw InputError("need at least 2 classes");
  for (std::size_t i = 1; i < bb.stage_strides.size(); ++i) {
    if (bb.stage_strides[i] != 2 * bb.stage_strides[i - 1]) {
      throw InputError("score fusion needs consecutive stage strides to double (stage '" +
                       bb.stage_names[i] + "')");
    }
  }
  const int first = bb.stage_strides.front();
  if ((first & (first - 1)) != 0) {
    throw InputError("shallowest stage stride must be a power of two");
  }

  LayerGraph g = bb.graph;
  const int classes = cfg.classes;
  auto refine = [&](int x, const std::string& name) {
    return cfg.use_br ? add_boundary_refine(g, x, BrSpec{classes}, name) : x;
  };
  auto upsample = [&](int x, const std::string& name) {
    return g.deconv(name, x, classes, {4, 4}, {2, 2}, {1, 1}, false, InitRule::bilinear);
  };

  std::vector<int> scores;
  for (std::size_t i = 0; i < bb.stage_layers.size(); ++i) {
    const std::string name = "head." + bb.stage_names[i];
    const int from = bb.stage_layers[i];
    const int k = kernels[i];
    int s = 0;
    if (cfg.head == HeadKind::pointwise || (cfg.head == HeadKind::gcn && k == 1)) {
      s = add_pointwise(g, from, classes, name + ".pointwise");
    } else if (cfg.head == HeadKind::gcn) {
      s = add_gcn(g, from, GcnSpec{k, g.channels(from), classes, true}, name + ".gcn");
    } else if (cfg.head == HeadKind::conv) {
      s = add_trivial_conv(g, from, k, classes, name + ".conv");
    } else {
      if (k < 3) {
        s = add_pointwise(g, from, classes, name + ".pointwise");
      } else {
        s = add_conv_stack(g, from, StackSpec{k, cfg.stack_m, g.channels(from), classes, true},
                           name + ".stack");
      }
    }
    scores.push_back(refine(s, name + ".br"));
  }

  int x = scores.back();
  for (std::size_t i = scores.size() - 1; i-- > 0;) {
    const std::string name = "fuse." + bb.stage_names[i];
    x = upsample(x, name + ".up");
    x = g.add(name + ".add", x, scores[i]);
    for (int r = 0; cfg.use_br && r < cfg.fusion_br; ++r) {
      x = add_boundary_refine(g, x, BrSpec{classes},
                              name + ".br" + (r == 0 ? "" : std::to_string(r + 1)));
    }
  }
  int stride = first;
  for (int step = 1; stride > 1; ++step, stride /= 2) {
    const std::string name = "final." + std::to_string(step);
    x = upsample(x, name + ".up");
    x = refine(x, name + ".br");
  }
  g.mark("score", x);
  return g;
}

}  // namespace

SegModel::SegModel(ArchSpec arch, SegConfig config)
    : arch_(std::move(arch)),
      config_(config),
      backbone_(build_backbone_graph(arch_)),
      stage_kernels_(head_kernels(backbone_, config_)),
      module_(build_head(backbone_, config_, stage_kernels_)) {}

void SegModel::check_input(const Shape& s) const {
  if (s.c != arch_.in_channels) {
    throw ShapeError("image has " + std::to_string(s.c) + " channels, model expects " +
                     std::to_string(arch_.in_channels));
  }
  const int stride = output_stride();
  if (s.h % stride != 0 || s.w % stride != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not a positive multiple of the output stride " +
                     std::to_string(stride) + "; pad it to the canvas first");
  }
}

Var SegModel::forward(Tape* tape, const Var& image, bool training) {
  check_input(image.shape());
  return module_.forward(tape, image, training);
}

Tensor SegModel::predict(const Tensor& image) const {
  check_input(image.shape());
  return module_.infer(image);
}

LayerGraph build_seg_graph(const ArchSpec& arch, const SegConfig& config) {
  const BackboneGraph bb = build_backbone_graph(arch);
  return build_head(bb, config, head_kernels(bb, config));
}

std::vector<int> seg_head_kernels(const ArchSpec& arch, const SegConfig& config) {
  return head_kernels(build_backbone_graph(arch), config);
}

SegModel build_gcn_segnet(const ArchSpec& backbone, const SegConfig& config) {
  return SegModel(backbone, config);
}

void init_weights(SegModel& model, std::uint64_t seed) { model.init(seed); }

Var forward_segmentation(SegModel& model, Tape* tape, const Var& image, bool training) {
  return model.forward(tape, image, training);
}

}  // namespace gcnkit
