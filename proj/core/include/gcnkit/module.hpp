#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gcnkit/autodiff.hpp"
#include "gcnkit/layer_graph.hpp"
#include "gcnkit/ops.hpp"
#include "gcnkit/serialize.hpp"

namespace gcnkit {

// Parameters and batch-norm statistics for one layer graph, plus an
// interpreter that runs the graph forward. Parameters are named
// "<layer>.weight", "<layer>.bias", "<layer>.gamma", "<layer>.beta"; batch-norm
// buffers "<layer>.running_mean" / "<layer>.running_var".
class Module {
 public:
  explicit Module(LayerGraph graph);
  Module(Module&&) noexcept = default;
  Module& operator=(Module&&) noexcept = default;

  const LayerGraph& graph() const { return graph_; }

  // Runs the graph. With a tape, parameters are recorded for backward; with
  // nullptr nothing is recorded. Training mode normalizes with batch
  // statistics and updates the running estimates. Returns the outputs of the
  // requested layers (in order); intermediates are released after last use.
  std::vector<Var> run(Tape* tape, const Var& x, bool training, const std::vector<int>& wanted);
  // Output of the last layer.
  Var forward(Tape* tape, const Var& x, bool training);
  // Every layer's output, index-aligned with graph().layers().
  std::vector<Var> forward_all(Tape* tape, const Var& x, bool training);

  // Inference (running statistics, no tape).
  std::vector<Var> infer(const Var& x, const std::vector<int>& wanted) const;
  Tensor infer(const Tensor& x) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(const std::string& name);
  const Parameter* find_parameter(const std::string& name) const;
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;
  BatchNormState* find_bn_state(const std::string& layer);
  const BatchNormState* find_bn_state(const std::string& layer) const;
  std::size_t parameter_count() const;

  void zero_grad();

  // Deterministic initialization from `seed` following each layer's
  // InitRule; batch-norm gamma = 1, beta = 0, running stats (0, 1).
  void init(std::uint64_t seed);

  // Parameters then batch-norm buffers, in layer order.
  std::vector<NamedTensor> state() const;
  // Requires every name and shape to match.
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  Var apply(Tape* tape, const LayerSpec& l, const std::vector<Var>& in, bool training);
  Var bind(Tape* tape, Parameter& p);

  LayerGraph graph_;
  // unique_ptr keeps Parameter addresses stable across moves.
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> param_index_;
  std::map<std::string, std::unique_ptr<BatchNormState>> bn_state_;
};

// Straight nested-loop forward pass of the graph in double precision, reading
// the module's float parameters. Slow; meant as an independent oracle for
// small shapes. Training mode normalizes with batch statistics but leaves the
// running estimates untouched.
Tensor reference_forward(const Module& m, const Tensor& x, bool training);

// Central-difference check of a whole module with respect to its input and
// every parameter. The output is contracted with fixed random weights (from
// opts.seed). Analytic gradients come from the float32 tape; the perturbed
// evaluations run through the double-precision interpreter above, so the
// differences are not drowned in float rounding of a deep graph. Coordinates
// whose stencil changes any ReLU sign or max-pool winner are skipped.
// Training mode also advances batch-norm running statistics once.
FiniteDiffReport module_finite_diff(Module& m, const Tensor& x, bool training,
                                    const FiniteDiffOptions& opts = {});

}  // namespace gcnkit
