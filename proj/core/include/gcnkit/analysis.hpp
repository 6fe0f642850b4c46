#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcnkit/arch.hpp"
#include "gcnkit/blocks.hpp"
#include "gcnkit/layer_graph.hpp"
#include "gcnkit/module.hpp"
#include "gcnkit/network.hpp"

namespace gcnkit {

// MAC convention: one multiply-accumulate is one FLOP unit, and only
// convolution / deconvolution layers are charged. Pooling, BN, ReLU and adds
// cost nothing.
inline constexpr const char* kFlopConvention = "1 MAC = 1 FLOP, conv layers only";

struct CountRow {
  std::string layer;
  LayerKind kind = LayerKind::input;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  int rf_h = 1;
  int rf_w = 1;
};

struct CountReport {
  std::vector<CountRow> rows;  // one per layer, graph order (input excluded)
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
};

struct CountOptions {
  bool include_bias = false;
  bool include_bn = false;  // BN gamma / beta
};

struct TrivialSpec {
  int k = 3;
  int ci = 0;
  int co = 0;
};

CountReport count_params(const LayerGraph& graph, CountOptions opts = {});
CountReport count_params(const GcnSpec& spec, CountOptions opts = {});
CountReport count_params(const TrivialSpec& spec, CountOptions opts = {});
CountReport count_params(const StackSpec& spec, CountOptions opts = {});
CountReport count_params(const BottleneckSpec& spec, CountOptions opts = {});
// Backbone, plus the head when the spec has one (kernels chosen for a
// 512x512 canvas).
CountReport count_params(const ArchSpec& spec, CountOptions opts = {});

// Parameters and MACs for an input of the given extent.
CountReport count_flops(const LayerGraph& graph, Hw input, CountOptions opts = {});
CountReport count_flops(const ArchSpec& spec, Hw input, CountOptions opts = {});

// Closed forms (bias-free).
std::int64_t gcn_params(int k, int ci, int co);
std::int64_t trivial_params(int k, int ci, int co);
std::int64_t stack_params(int k_eq, int m, int ci, int co);
// 260694 -> "260K"; rounds to the nearest thousand.
std::string round_to_k(std::int64_t n);

// Inclusive pixel box.
struct Box {
  int y0 = 0;
  int x0 = 0;
  int y1 = -1;
  int x1 = -1;

  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
  bool empty() const { return y1 < y0 || x1 < x0; }
  bool contains(int y, int x) const { return y >= y0 && y <= y1 && x >= x0 && x <= x1; }
  bool contains(const Box& b) const {
    return b.empty() || (contains(b.y0, b.x0) && contains(b.y1, b.x1));
  }
  bool operator==(const Box&) const = default;
};

struct RfRow {
  std::string layer;
  int rf_h = 1;
  int rf_w = 1;
  // Input pixels per output unit (fractional after deconvolutions).
  double jump_h = 1.0;
  double jump_w = 1.0;
  // First input pixel seen by output unit (0, 0); negative inside padding.
  int offset_h = 0;
  int offset_w = 0;
};

struct RfReport {
  std::vector<RfRow> rows;  // graph order, input excluded
  const RfRow& at(const std::string& layer) const;
};

// Theoretical receptive field of every layer on an unbounded input. Per
// axis the standard recurrence r' = r + (k - 1) * jump, jump' = jump * stride;
// joins take the hull of their inputs and deconvolutions report the widest
// field over one period of output positions.
RfReport theoretical_rf(const LayerGraph& graph);
RfReport theoretical_rf(const ArchSpec& spec);

// Exact input region that can influence output unit (y, x) of `layer` for a
// concrete input extent, with padding and borders taken into account.
Box rf_box(const LayerGraph& graph, int layer, Hw input, int y, int x);

struct VrfResult {
  Tensor heatmap;              // (1, 1, H, W), channel-summed |d score / d input|
  std::vector<std::uint8_t> mask;  // H * W, 1 where heatmap >= threshold * max
  double threshold = 0.05;
  std::int64_t area = 0;
  Box bbox;                    // of the mask
};

// Backpropagates score channel `cls` at (y, x) of the module's last layer to
// the input, in inference mode. Throws NumericalError("dead probe") when the
// gradient is zero everywhere.
VrfResult empirical_vrf(const Module& model, const Tensor& input, int y, int x, int cls,
                        double threshold = 0.05);
VrfResult empirical_vrf(const SegModel& model, const Tensor& input, int y, int x, int cls,
                        double threshold = 0.05);

// Mask area at each threshold, from one heatmap.
std::vector<std::int64_t> vrf_area_curve(const Tensor& heatmap, const std::vector<double>& ts);

}  // namespace gcnkit
