#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcnkit/arch.hpp"
#include "gcnkit/blocks.hpp"
#include "gcnkit/module.hpp"

namespace gcnkit {

// Backbone layer graph with one endpoint per stage, marked "stage:<name>".
struct BackboneGraph {
  LayerGraph graph;
  std::vector<std::string> stage_names;
  std::vector<int> stage_layers;
  std::vector<int> stage_strides;
  std::vector<int> stage_channels;
};

BackboneGraph build_backbone_graph(const ArchSpec& spec);
Module build_backbone(const ArchSpec& spec);
Module build_backbone(BackboneVariant variant);

struct SegConfig {
  int classes = 21;
  HeadKind head = HeadKind::gcn;
  int k = 15;
  bool use_br = true;
  int stack_m = 0;
  // Boundary refinements after each fusion add.
  int fusion_br = 1;
  // Input canvas; fixes the per-stage head kernels.
  Hw canvas{512, 512};
};

// Head settings from an ArchSpec head line (canvas left at its default).
SegConfig seg_config_from(const HeadSpec& head);

// Full pipeline: backbone stages -> per-stage score head (+ BR) -> fusion
// from the deepest stage upward (deconv x2 -> add -> BR) -> deconv x2 + BR
// until stride 1. A GCN head with k = 1 is the 1x1 baseline.
//
// The head kernel at a stage with extent e is min(k, 2e - 1): a same-padded
// kernel of 2e - 1 already spans the whole map, anything wider only adds
// taps that never see data.
class SegModel {
 public:
  SegModel(ArchSpec arch, SegConfig config);

  const ArchSpec& arch() const { return arch_; }
  const SegConfig& config() const { return config_; }
  Module& module() { return module_; }
  const Module& module() const { return module_; }
  const LayerGraph& graph() const { return module_.graph(); }

  const std::vector<int>& stage_kernels() const { return stage_kernels_; }
  const std::vector<int>& stage_strides() const { return backbone_.stage_strides; }
  const std::vector<int>& stage_layers() const { return backbone_.stage_layers; }
  int output_stride() const { return backbone_.stage_strides.back(); }

  // Score map (n, classes, H, W) for an image whose extent is a multiple of
  // output_stride().
  Var forward(Tape* tape, const Var& image, bool training);
  Tensor predict(const Tensor& image) const;

  void init(std::uint64_t seed) { module_.init(seed); }

 private:
  void check_input(const Shape& s) const;

  ArchSpec arch_;
  SegConfig config_;
  BackboneGraph backbone_;
  std::vector<int> stage_kernels_;
  Module module_;
};

// The SegModel layer graph without allocating any parameters (for counting
// and receptive-field analysis of large networks).
LayerGraph build_seg_graph(const ArchSpec& arch, const SegConfig& config);
// Per-stage head kernels chosen for config.canvas.
std::vector<int> seg_head_kernels(const ArchSpec& arch, const SegConfig& config);

SegModel build_gcn_segnet(const ArchSpec& backbone, const SegConfig& config);

// Deterministic He-normal initialization of every convolution (zero biases,
// zero second BR convolution, bilinear fusion deconvolutions, unit BN).
void init_weights(SegModel& model, std::uint64_t seed);

Var forward_segmentation(SegModel& model, Tape* tape, const Var& image, bool training);

}  // namespace gcnkit
