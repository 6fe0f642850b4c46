#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gcnkit/autodiff.hpp"
#include "gcnkit/data.hpp"
#include "gcnkit/error.hpp"
#include "gcnkit/network.hpp"

namespace gcnkit {

struct SgdConfig {
  double lr = 2.5e-3;
  double momentum = 0.99;
  double weight_decay = 5e-4;
  int batch_size = 1;

  // Throws InputError unless lr >= 0, momentum in [0, 1), weight_decay >= 0
  // and batch_size >= 1. lr = 0 is accepted as a frozen-weights run.
  void validate() const;
};

// Velocity per parameter name.
struct SgdState {
  std::map<std::string, Tensor> velocity;
};

// Heavy-ball update v = mu * v - lr * (g + wd * w), w += v. Parameters with
// decay == false (biases, BN gamma / beta) skip the wd term. A non-finite
// gradient throws NumericalError naming the parameter, before any update.
void sgd_momentum_step(const std::vector<Parameter*>& params, SgdState& state, const SgdConfig& cfg);

struct TrainOptions {
  int epochs = 1;
  std::uint64_t seed = 0;
  bool augment = true;
  // Called after every step with (step, loss).
  std::function<void(int, double)> on_step;
};

// Non-finite training loss.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(int step, const std::string& what)
      : NumericalError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainResult {
  std::vector<double> loss;  // one entry per step
  int steps = 0;
};

// Per step: augment -> pad to the model canvas -> forward -> softmax
// cross-entropy -> backward -> SGD. Sample order is a seeded shuffle per
// epoch. A non-finite loss throws DivergenceError.
TrainResult train(SegModel& model, const Dataset& data, const SgdConfig& cfg,
                  const TrainOptions& opts);

// "step,loss" CSV, one row per step, 9 significant digits.
void write_loss_csv(const std::string& path, const std::vector<double>& loss);

}  // namespace gcnkit
