#pragma once

#include <string>

#include "gcnkit/layer_graph.hpp"
#include "gcnkit/module.hpp"

namespace gcnkit {

// Separable large-kernel block: (1 x k then k x 1) + (k x 1 then 1 x k), all
// convolutions ci -> co -> co, no nonlinearity in between.
struct GcnSpec {
  int k = 7;
  int ci = 0;
  int co = 0;
  bool bias = true;
};

// Residual score refinement S + R(S), R = conv3x3 -> ReLU -> conv3x3 over c
// channels. The second convolution starts at zero.
struct BrSpec {
  int c = 0;
};

// Stack of (k_eq - 1) / 2 linear 3x3 convolutions: ci -> m -> ... -> m -> co.
struct StackSpec {
  int k_eq = 3;
  int m = 0;
  int ci = 0;
  int co = 0;
  bool bias = true;

  int depth() const { return (k_eq - 1) / 2; }
};

enum class BottleneckVariant { resnet, resnet_gcn };

// ResNet bottleneck. The plain variant is 1x1 (mid) -> 3x3 (mid) -> 1x1 (co);
// the GCN variant replaces the first two with two separable branches of
// width mid and kernel k. Downsampling sits on the first convolution of the
// block (of each branch for the GCN variant).
struct BottleneckSpec {
  BottleneckVariant variant = BottleneckVariant::resnet;
  int ci = 0;
  int mid = 0;
  int co = 0;
  int stride = 1;
  int k = 3;  // GCN variant only
  // Projection shortcut; forced on when ci != co or stride != 1.
  bool projection = false;
  bool zero_init_last = false;

  bool needs_projection() const { return projection || ci != co || stride != 1; }
};

// Graph builders. Each returns the id of the block's output layer; layer
// names are prefixed with `name` + ".".
int add_gcn(LayerGraph& g, int from, const GcnSpec& spec, const std::string& name);
int add_boundary_refine(LayerGraph& g, int from, const BrSpec& spec, const std::string& name);
int add_trivial_conv(LayerGraph& g, int from, int k, int co, const std::string& name,
                     bool bias = true);
int add_pointwise(LayerGraph& g, int from, int co, const std::string& name, bool bias = true);
int add_conv_stack(LayerGraph& g, int from, const StackSpec& spec, const std::string& name);
int add_bottleneck(LayerGraph& g, int from, const BottleneckSpec& spec, const std::string& name);
// conv -> BN -> ReLU
int add_conv_bn_relu(LayerGraph& g, int from, int co, Hw kernel, Hw stride, Hw pad,
                     const std::string& name);

// Single-block modules, named "gcn", "br", "conv", "pointwise", "stack",
// "bottleneck".
Module make_gcn_block(const GcnSpec& spec);
Module make_boundary_refine(const BrSpec& spec);
Module make_trivial_conv_block(int k, int ci, int co);
Module make_pointwise_block(int ci, int co);
Module make_conv_stack_block(const StackSpec& spec);
Module make_bottleneck_block(const BottleneckSpec& spec);

// Dense (co, ci, k, k) kernel equal to the GCN block with prefix `name`:
// branch a contributes sum_c W_kx1[o, c] (outer) W_1xk[c, i], branch b the
// transposed composition. Ignores biases.
Tensor compose_gcn_kernel(const Module& m, const std::string& name = "gcn");

}  // namespace gcnkit
