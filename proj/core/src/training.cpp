#include "gcnkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "gcnkit/ops.hpp"

namespace gcnkit {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void SgdConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InputError("lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw InputError("weight_decay must be finite and >= 0");
  }
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
}

void sgd_momentum_step(const std::vector<Parameter*>& params, SgdState& state, const SgdConfig& cfg) {
  cfg.validate();
  for (const Parameter* p : params) {
    if (!p->grad.empty() && p->grad.shape() != p->value.shape()) {
      throw ShapeError("gradient of '" + p->name + "' has shape " + p->grad.shape().str() +
                       ", parameter " + p->value.shape().str());
    }
    if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + p->name + "'");
  }
  const auto lr = static_cast<float>(cfg.lr);
  const auto mu = static_cast<float>(cfg.momentum);
  const auto wd = static_cast<float>(cfg.weight_decay);
  for (Parameter* p : params) {
    auto [it, fresh] = state.velocity.try_emplace(p->name, p->value.shape());
    Tensor& v = it->second;
    if (v.shape() != p->value.shape()) {
      throw ShapeError("momentum buffer of '" + p->name + "' has the wrong shape");
    }
    const float decay = p->decay ? wd : 0.0f;
    const bool has_grad = !p->grad.empty();
    float* w = p->value.ptr();
    float* vel = v.ptr();
    const float* g = has_grad ? p->grad.ptr() : nullptr;
    const std::size_t n = p->value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = has_grad ? g[i] : 0.0f;
      vel[i] = mu * vel[i] - lr * (gi + decay * w[i]);
      w[i] += vel[i];
    }
  }
}

TrainResult train(SegModel& model, const Dataset& data, const SgdConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (data.empty()) throw InputError("train: empty dataset");
  if (opts.epochs < 0) throw InputError("train: epochs must be >= 0");
  const Hw canvas = model.config().canvas;
  SgdState state;
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::mt19937_64 rng(splitmix(opts.seed));
  const auto params = model.module().parameters();
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SegSample> prepared;
      prepared.reserve(end - start);
      for (std::size_t j = start; j < end; ++j) {
        const SegSample& raw = data[order[j]];
        const std::uint64_t key = splitmix(opts.seed ^ splitmix((static_cast<std::uint64_t>(epoch) << 32) | order[j]));
        SegSample s = opts.augment ? augment(raw, key) : subtract_mean(raw);
        prepared.push_back(pad_to_canvas(s, canvas.h, canvas.w));
      }
      std::vector<const SegSample*> ptrs;
      for (const SegSample& s : prepared) ptrs.push_back(&s);
      const SegSample batch = make_batch(ptrs);

      model.module().zero_grad();
      Tape tape;
      Var logits = model.forward(&tape, constant(batch.image), true);
      Var loss = softmax_ce_loss(logits, batch.label);
      const double value = loss.value()[0];
      const int step = result.steps;
      if (!std::isfinite(value)) throw DivergenceError(step, "loss is " + std::to_string(value));
      tape.backward(loss);
      try {
        sgd_momentum_step(params, state, cfg);
      } catch (const NumericalError& e) {
        throw DivergenceError(step, e.what());
      }
      result.loss.push_back(value);
      ++result.steps;
      if (opts.on_step) opts.on_step(step, value);
    }
  }
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<double>& loss) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, loss[i]);
    out << buf;
  }
  if (!out) throw InputError("cannot write " + path);
}

}  // namespace gcnkit
