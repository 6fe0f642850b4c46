#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gcnkit/autodiff.hpp"
#include "gcnkit/tensor.hpp"

namespace gcnkit {

struct Hw {
  int h = 1;
  int w = 1;
  bool operator==(const Hw&) const = default;
};

struct ConvGeometry {
  Hw stride{1, 1};
  Hw pad{0, 0};
};

// Output extent of a cross-correlation along one axis.
inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}
// Output extent of a transposed convolution along one axis.
inline int deconv_out_extent(int in, int kernel, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + kernel;
}

// Cross-correlation. weight: (co, ci, kh, kw); bias: (1, co, 1, 1) or invalid.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry geo);

// Adjoint of conv2d with the same weight tensor. weight: (cin, cout, kh, kw)
// where cin is this op's input channel count; bias: (1, cout, 1, 1).
Var transposed_conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry geo);

// Window maximum; padded cells never win. Gradient goes to the first
// (row-major) argmax of each window.
Var max_pool2d(const Var& x, int kernel, int stride, int pad = 0);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, float factor);

// Pads ph rows above and below, pw columns left and right, with `value`.
// The padded cells carry no gradient.
Var pad2d(const Var& x, int ph, int pw, float value = 0.0f);
// Asymmetric zero/constant pad to reach (h, w), padding bottom-right.
Var pad_to(const Var& x, int h, int w, float value = 0.0f);
// Window [y0, y0+h) x [x0, x0+w).
Var crop2d(const Var& x, int y0, int x0, int h, int w);

// Half-pixel-centered bilinear resampling (edge clamped).
Var resize_bilinear(const Var& x, int out_h, int out_w);

struct BatchNormState {
  Tensor running_mean;  // (1, c, 1, 1)
  Tensor running_var;   // (1, c, 1, 1), biased estimate
  float momentum = 0.1f;
};

// Per-channel normalization. Training mode uses batch statistics over
// (n, h, w) and updates `state`; inference mode uses the stored statistics.
// gamma, beta: (1, c, 1, 1).
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                 bool training, float eps = 1e-5f);

// Mean per-pixel softmax cross-entropy over pixels whose label != ignore.
Var softmax_ce_loss(const Var& logits, const LabelMap& labels,
                    std::int32_t ignore_label = kIgnoreLabel);

// Scalar sum of all elements.
Var sum(const Var& x);
// Scalar sum of x * weights (weights constant, same shape).
Var weighted_sum(const Var& x, const Tensor& weights);

// Softmax over channels (no gradient needed by callers; plain tensor op).
Tensor softmax_channels(const Tensor& logits);
// Argmax over channels, first index on ties.
LabelMap argmax_channels(const Tensor& scores);

struct FiniteDiffOptions {
  float eps = 1e-2f;
  // Coordinates checked per tensor (all when the tensor is smaller).
  int samples_per_tensor = 24;
  unsigned seed = 0;
  // Gradients below this magnitude are compared absolutely.
  double floor = 1e-2;
  // Same, as a fraction of the largest analytic gradient in the tensor.
  // Float32 forward passes carry rounding noise of roughly fixed absolute
  // size, so a coordinate a hundred times smaller than its neighbours cannot
  // be resolved relatively.
  double scale_floor = 1e-2;
  // A coordinate whose one-sided slopes (f(w+eps) - f(w)) / eps and
  // (f(w) - f(w-eps)) / eps differ by more than this (relative, same floor)
  // sits on a kink (ReLU, max-pool tie) and is skipped: the function is not
  // differentiable inside the stencil. <= 0 disables skipping.
  double kink_tol = 2e-3;
};

struct FiniteDiffReport {
  // max |analytic - numeric| / max(|analytic|, |numeric|, floor,
  //                                 scale_floor * max |analytic of the tensor|)
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;  // kinks
  // Where max_rel_err was reached.
  int worst_tensor = -1;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients against central differences
// (f(w+eps) - f(w-eps)) / (2 eps) on sampled coordinates of every tensor in
// `params`. Each call of `f` receives one differentiable leaf per tensor (in
// order). A scalar output is used as is; any other output is contracted with
// fixed random weights in double precision, so float rounding of one big sum
// does not swamp small differences.
FiniteDiffReport finite_diff_report(const std::function<Var(Tape&, std::vector<Var>&)>& f,
                                    std::vector<Tensor*> params, const FiniteDiffOptions& opts = {});
double finite_diff_check(const std::function<Var(Tape&, std::vector<Var>&)>& f,
                         std::vector<Tensor*> params, const FiniteDiffOptions& opts = {});

// One objective evaluation. `pattern` fingerprints the piecewise-linear
// regime (which ReLUs are active, which max-pool cells win); 0 when unknown.
struct FdSample {
  double value = 0.0;
  std::uint64_t pattern = 0;
};

// The comparison step on its own: `analytic[t]` is the gradient for
// params[t] and `evaluate` recomputes the objective from the current tensor
// contents. Coordinates whose stencil changes the pattern are skipped as
// kinks, as are those failing the kink_tol slope test.
FiniteDiffReport compare_central_differences(const std::vector<Tensor*>& params,
                                             const std::vector<Tensor>& analytic,
                                             const std::function<FdSample()>& evaluate,
                                             const FiniteDiffOptions& opts);

}  // namespace gcnkit
