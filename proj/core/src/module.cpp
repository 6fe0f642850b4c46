#include "gcnkit/module.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "gcnkit/error.hpp"

namespace gcnkit {
namespace {

Shape weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::deconv) return {l.ci, l.co, l.kernel.h, l.kernel.w};
  return {l.co, l.ci, l.kernel.h, l.kernel.w};
}

float bilinear_tap(int i, int size) {
  const int factor = (size + 1) / 2;
  const double center = size % 2 == 1 ? factor - 1 : factor - 0.5;
  return static_cast<float>(1.0 - std::abs(i - center) / factor);
}

}  // namespace

Module::Module(LayerGraph graph) : graph_(std::move(graph)) {
  auto add_param = [this](const std::string& name, Shape shape, bool decay) {
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(shape);
    p->decay = decay;
    param_index_[name] = params_.size();
    params_.push_back(std::move(p));
  };
  for (const LayerSpec& l : graph_.layers()) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv:
        add_param(l.name + ".weight", weight_shape(l), true);
        if (l.bias) add_param(l.name + ".bias", Shape{1, l.co, 1, 1}, false);
        break;
      case LayerKind::batch_norm: {
        add_param(l.name + ".gamma", Shape{1, l.co, 1, 1}, false);
        add_param(l.name + ".beta", Shape{1, l.co, 1, 1}, false);
        auto st = std::make_unique<BatchNormState>();
        st->running_mean = Tensor(Shape{1, l.co, 1, 1}, 0.0f);
        st->running_var = Tensor(Shape{1, l.co, 1, 1}, 1.0f);
        bn_state_[l.name] = std::move(st);
        break;
      }
      default:
        break;
    }
  }
  for (auto& p : params_) {
    if (p->name.ends_with(".gamma")) p->value.fill(1.0f);
  }
}

Var Module::bind(Tape* tape, Parameter& p) {
  return tape != nullptr ? tape->param(p) : constant(p.value);
}

Var Module::apply(Tape* tape, const LayerSpec& l, const std::vector<Var>& in, bool training) {
  switch (l.kind) {
    case LayerKind::input:
      return in[0];
    case LayerKind::conv: {
      Var w = bind(tape, parameter(l.name + ".weight"));
      Var b = l.bias ? bind(tape, parameter(l.name + ".bias")) : Var();
      return conv2d(in[0], w, b, ConvGeometry{l.stride, l.pad});
    }
    case LayerKind::deconv: {
      Var w = bind(tape, parameter(l.name + ".weight"));
      Var b = l.bias ? bind(tape, parameter(l.name + ".bias")) : Var();
      return transposed_conv2d(in[0], w, b, ConvGeometry{l.stride, l.pad});
    }
    case LayerKind::batch_norm: {
      Var g = bind(tape, parameter(l.name + ".gamma"));
      Var b = bind(tape, parameter(l.name + ".beta"));
      return batch_norm2d(in[0], g, b, *bn_state_.at(l.name), training);
    }
    case LayerKind::relu:
      return relu(in[0]);
    case LayerKind::max_pool:
      return max_pool2d(in[0], l.kernel.h, l.stride.h, l.pad.h);
    case LayerKind::add:
      return add(in[0], in[1]);
  }
  throw Error("unknown layer kind");
}

std::vector<Var> Module::run(Tape* tape, const Var& x, bool training,
                             const std::vector<int>& wanted) {
  const auto& layers = graph_.layers();
  if (x.shape().c != graph_.in_channels()) {
    throw ShapeError("input has " + std::to_string(x.shape().c) + " channels, graph expects " +
                     std::to_string(graph_.in_channels()));
  }
  std::vector<int> last_use(layers.size(), -1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (int from : layers[i].inputs) last_use[static_cast<std::size_t>(from)] = static_cast<int>(i);
  }
  for (int w : wanted) {
    if (w < 0 || w >= graph_.size()) throw Error("requested unknown layer " + std::to_string(w));
    last_use[static_cast<std::size_t>(w)] = graph_.size();
  }
  int needed = 0;
  for (int w : wanted) needed = std::max(needed, w);

  std::vector<Var> values(layers.size());
  values[0] = x;
  std::vector<Var> args;
  for (int i = 1; i <= needed; ++i) {
    const LayerSpec& l = layers[static_cast<std::size_t>(i)];
    args.clear();
    for (int from : l.inputs) args.push_back(values[static_cast<std::size_t>(from)]);
    try {
      values[static_cast<std::size_t>(i)] = apply(tape, l, args, training);
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + l.name + "': " + e.what());
    }
    for (int from : l.inputs) {
      if (last_use[static_cast<std::size_t>(from)] == i) values[static_cast<std::size_t>(from)] = Var();
    }
  }
  std::vector<Var> out;
  out.reserve(wanted.size());
  for (int w : wanted) out.push_back(values[static_cast<std::size_t>(w)]);
  return out;
}

Var Module::forward(Tape* tape, const Var& x, bool training) {
  return run(tape, x, training, {graph_.last()}).front();
}

std::vector<Var> Module::forward_all(Tape* tape, const Var& x, bool training) {
  std::vector<int> all(static_cast<std::size_t>(graph_.size()));
  for (int i = 0; i < graph_.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return run(tape, x, training, all);
}

std::vector<Var> Module::infer(const Var& x, const std::vector<int>& wanted) const {
  // Inference mode touches neither parameters nor batch-norm statistics.
  return const_cast<Module*>(this)->run(nullptr, x, false, wanted);
}

Tensor Module::infer(const Tensor& x) const {
  return infer(constant(x), {graph_.last()}).front().value();
}

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> Module::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* Module::find_parameter(const std::string& name) {
  auto it = param_index_.find(name);
  return it == param_index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* Module::find_parameter(const std::string& name) const {
  auto it = param_index_.find(name);
  return it == param_index_.end() ? nullptr : params_[it->second].get();
}

Parameter& Module::parameter(const std::string& name) {
  if (Parameter* p = find_parameter(name)) return *p;
  throw Error("no parameter named '" + name + "'");
}

const Parameter& Module::parameter(const std::string& name) const {
  if (const Parameter* p = find_parameter(name)) return *p;
  throw Error("no parameter named '" + name + "'");
}

BatchNormState* Module::find_bn_state(const std::string& layer) {
  auto it = bn_state_.find(layer);
  return it == bn_state_.end() ? nullptr : it->second.get();
}

const BatchNormState* Module::find_bn_state(const std::string& layer) const {
  auto it = bn_state_.find(layer);
  return it == bn_state_.end() ? nullptr : it->second.get();
}

std::size_t Module::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p->value.numel();
  return total;
}

void Module::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void Module::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const LayerSpec& l : graph_.layers()) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::deconv) {
      Tensor& w = parameter(l.name + ".weight").value;
      switch (l.init) {
        case InitRule::he_normal: {
          const double fan_in = static_cast<double>(l.ci) * l.kernel.h * l.kernel.w;
          std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
          for (float& v : w.data()) v = dist(rng);
          break;
        }
        case InitRule::zeros:
          w.fill(0.0f);
          break;
        case InitRule::bilinear: {
          w.fill(0.0f);
          for (int c = 0; c < l.co; ++c) {
            for (int y = 0; y < l.kernel.h; ++y) {
              for (int x = 0; x < l.kernel.w; ++x) {
                w.at(c, c, y, x) = bilinear_tap(y, l.kernel.h) * bilinear_tap(x, l.kernel.w);
              }
            }
          }
          break;
        }
      }
      if (l.bias) parameter(l.name + ".bias").value.fill(0.0f);
    } else if (l.kind == LayerKind::batch_norm) {
      parameter(l.name + ".gamma").value.fill(1.0f);
      parameter(l.name + ".beta").value.fill(0.0f);
      BatchNormState& st = *bn_state_.at(l.name);
      st.running_mean.fill(0.0f);
      st.running_var.fill(1.0f);
    }
  }
}

std::vector<NamedTensor> Module::state() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) out.emplace_back(p->name, p->value);
  for (const LayerSpec& l : graph_.layers()) {
    if (l.kind != LayerKind::batch_norm) continue;
    const BatchNormState& st = *bn_state_.at(l.name);
    out.emplace_back(l.name + ".running_mean", st.running_mean);
    out.emplace_back(l.name + ".running_var", st.running_var);
  }
  return out;
}

void Module::load_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto fetch = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("model file lacks tensor '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw InputError("tensor '" + name + "' has shape " + it->second->shape().str() +
                       ", model expects " + dst.shape().str());
    }
    dst = *it->second;
  };
  for (auto& p : params_) fetch(p->name, p->value);
  for (auto& [layer, st] : bn_state_) {
    fetch(layer + ".running_mean", st->running_mean);
    fetch(layer + ".running_var", st->running_var);
  }
  const std::size_t expected = params_.size() + 2 * bn_state_.size();
  if (tensors.size() != expected) {
    throw InputError("model file has " + std::to_string(tensors.size()) + " tensors, expected " +
                     std::to_string(expected));
  }
}

namespace {

struct Grid {
  Shape s;
  std::vector<double> v;

  explicit Grid(Shape shape) : s(shape), v(shape.numel(), 0.0) {}
  double& at(int n, int c, int y, int x) {
    return v[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
  }
  double at(int n, int c, int y, int x) const {
    return v[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
  }
};

Grid to_grid(const Tensor& t) {
  Grid g(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) g.v[i] = t[i];
  return g;
}

double bias_at(const Module& m, const LayerSpec& l, int o) {
  return l.bias ? static_cast<double>(m.parameter(l.name + ".bias").value[static_cast<std::size_t>(o)]) : 0.0;
}

Grid ref_conv(const Module& m, const LayerSpec& l, const Grid& x) {
  const Tensor& w = m.parameter(l.name + ".weight").value;
  const Shape ws = w.shape();
  if (x.s.c != ws.c) throw ShapeError("layer '" + l.name + "': channel mismatch");
  Grid out({x.s.n, ws.n, conv_out_extent(x.s.h, ws.h, l.stride.h, l.pad.h),
            conv_out_extent(x.s.w, ws.w, l.stride.w, l.pad.w)});
  for (int n = 0; n < out.s.n; ++n)
    for (int o = 0; o < out.s.c; ++o)
      for (int y = 0; y < out.s.h; ++y)
        for (int xx = 0; xx < out.s.w; ++xx) {
          double acc = bias_at(m, l, o);
          for (int c = 0; c < ws.c; ++c)
            for (int i = 0; i < ws.h; ++i) {
              const int iy = y * l.stride.h - l.pad.h + i;
              if (iy < 0 || iy >= x.s.h) continue;
              for (int j = 0; j < ws.w; ++j) {
                const int ix = xx * l.stride.w - l.pad.w + j;
                if (ix < 0 || ix >= x.s.w) continue;
                acc += x.at(n, c, iy, ix) * static_cast<double>(w.at(o, c, i, j));
              }
            }
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

Grid ref_deconv(const Module& m, const LayerSpec& l, const Grid& x) {
  const Tensor& w = m.parameter(l.name + ".weight").value;
  const Shape ws = w.shape();  // (ci, co, kh, kw)
  if (x.s.c != ws.n) throw ShapeError("layer '" + l.name + "': channel mismatch");
  Grid out({x.s.n, ws.c, deconv_out_extent(x.s.h, ws.h, l.stride.h, l.pad.h),
            deconv_out_extent(x.s.w, ws.w, l.stride.w, l.pad.w)});
  for (int n = 0; n < out.s.n; ++n)
    for (int o = 0; o < out.s.c; ++o)
      for (int y = 0; y < out.s.h; ++y)
        for (int xx = 0; xx < out.s.w; ++xx) out.at(n, o, y, xx) = bias_at(m, l, o);
  for (int n = 0; n < x.s.n; ++n)
    for (int c = 0; c < x.s.c; ++c)
      for (int y = 0; y < x.s.h; ++y)
        for (int xx = 0; xx < x.s.w; ++xx)
          for (int o = 0; o < ws.c; ++o)
            for (int i = 0; i < ws.h; ++i) {
              const int oy = y * l.stride.h - l.pad.h + i;
              if (oy < 0 || oy >= out.s.h) continue;
              for (int j = 0; j < ws.w; ++j) {
                const int ox = xx * l.stride.w - l.pad.w + j;
                if (ox < 0 || ox >= out.s.w) continue;
                out.at(n, o, oy, ox) += x.at(n, c, y, xx) * static_cast<double>(w.at(c, o, i, j));
              }
            }
  return out;
}

Grid ref_batch_norm(const Module& m, const LayerSpec& l, const Grid& x, bool training) {
  constexpr double eps = 1e-5;  // batch_norm2d default
  const Tensor& gamma = m.parameter(l.name + ".gamma").value;
  const Tensor& beta = m.parameter(l.name + ".beta").value;
  const BatchNormState* st = m.find_bn_state(l.name);
  Grid out(x.s);
  const double count = static_cast<double>(x.s.n) * x.s.h * x.s.w;
  for (int c = 0; c < x.s.c; ++c) {
    double mean = 0.0, var = 1.0;
    if (training) {
      double s = 0.0, ss = 0.0;
      for (int n = 0; n < x.s.n; ++n)
        for (int y = 0; y < x.s.h; ++y)
          for (int xx = 0; xx < x.s.w; ++xx) s += x.at(n, c, y, xx);
      mean = s / count;
      for (int n = 0; n < x.s.n; ++n)
        for (int y = 0; y < x.s.h; ++y)
          for (int xx = 0; xx < x.s.w; ++xx) ss += (x.at(n, c, y, xx) - mean) * (x.at(n, c, y, xx) - mean);
      var = ss / count;
    } else if (st != nullptr && st->running_mean.numel() == static_cast<std::size_t>(x.s.c)) {
      mean = st->running_mean[static_cast<std::size_t>(c)];
      var = st->running_var[static_cast<std::size_t>(c)];
    }
    const double scale = gamma[static_cast<std::size_t>(c)] / std::sqrt(var + eps);
    for (int n = 0; n < x.s.n; ++n)
      for (int y = 0; y < x.s.h; ++y)
        for (int xx = 0; xx < x.s.w; ++xx)
          out.at(n, c, y, xx) = (x.at(n, c, y, xx) - mean) * scale + beta[static_cast<std::size_t>(c)];
  }
  return out;
}

// Max pooling; padding never wins. Winners are hashed into `h`.
Grid ref_max_pool(const LayerSpec& l, const Grid& x, std::uint64_t* h) {
  Grid out({x.s.n, x.s.c, conv_out_extent(x.s.h, l.kernel.h, l.stride.h, l.pad.h),
            conv_out_extent(x.s.w, l.kernel.w, l.stride.w, l.pad.w)});
  for (int n = 0; n < out.s.n; ++n)
    for (int c = 0; c < out.s.c; ++c)
      for (int y = 0; y < out.s.h; ++y)
        for (int xx = 0; xx < out.s.w; ++xx) {
          int best = -1;
          double best_v = 0.0;
          for (int i = 0; i < l.kernel.h; ++i)
            for (int j = 0; j < l.kernel.w; ++j) {
              const int iy = y * l.stride.h - l.pad.h + i, ix = xx * l.stride.w - l.pad.w + j;
              if (iy < 0 || ix < 0 || iy >= x.s.h || ix >= x.s.w) continue;
              const double v = x.at(n, c, iy, ix);
              if (best < 0 || v > best_v) best = i * l.kernel.w + j, best_v = v;
            }
          out.at(n, c, y, xx) = best_v;
          *h = (*h ^ static_cast<std::uint64_t>(best)) * 1099511628211ULL;
        }
  return out;
}

// Output of the last layer plus an FNV-1a hash of every ReLU sign and
// max-pool winner.
std::pair<Grid, std::uint64_t> reference_run(const Module& m, const Tensor& input, bool training) {
  const LayerGraph& g = m.graph();
  if (input.shape().c != g.in_channels()) throw ShapeError("reference_forward: input channel mismatch");
  std::uint64_t h = 1469598103934665603ULL;
  std::vector<std::optional<Grid>> vals(static_cast<std::size_t>(g.size()));
  std::vector<int> last_use(static_cast<std::size_t>(g.size()), -1);
  for (int i = 0; i < g.size(); ++i)
    for (int from : g.layer(i).inputs) last_use[static_cast<std::size_t>(from)] = i;
  vals[0] = to_grid(input);
  for (int i = 1; i < g.size(); ++i) {
    const LayerSpec& l = g.layer(i);
    const Grid& a = *vals[static_cast<std::size_t>(l.inputs.at(0))];
    switch (l.kind) {
      case LayerKind::input:
        vals[static_cast<std::size_t>(i)] = a;
        break;
      case LayerKind::conv:
        vals[static_cast<std::size_t>(i)] = ref_conv(m, l, a);
        break;
      case LayerKind::deconv:
        vals[static_cast<std::size_t>(i)] = ref_deconv(m, l, a);
        break;
      case LayerKind::batch_norm:
        vals[static_cast<std::size_t>(i)] = ref_batch_norm(m, l, a, training);
        break;
      case LayerKind::relu: {
        Grid out = a;
        for (double& v : out.v) {
          h = (h ^ static_cast<std::uint64_t>(v > 0.0)) * 1099511628211ULL;
          v = std::max(v, 0.0);
        }
        vals[static_cast<std::size_t>(i)] = std::move(out);
        break;
      }
      case LayerKind::max_pool:
        vals[static_cast<std::size_t>(i)] = ref_max_pool(l, a, &h);
        break;
      case LayerKind::add: {
        const Grid& b = *vals[static_cast<std::size_t>(l.inputs.at(1))];
        if (!(a.s == b.s)) throw ShapeError("layer '" + l.name + "': add shape mismatch");
        Grid out = a;
        for (std::size_t k = 0; k < out.v.size(); ++k) out.v[k] += b.v[k];
        vals[static_cast<std::size_t>(i)] = std::move(out);
        break;
      }
    }
    for (int from : l.inputs)
      if (last_use[static_cast<std::size_t>(from)] == i && from != g.last()) vals[static_cast<std::size_t>(from)].reset();
  }
  return {std::move(*vals.back()), h};
}

}  // namespace

Tensor reference_forward(const Module& m, const Tensor& x, bool training) {
  const Grid out = reference_run(m, x, training).first;
  Tensor t(out.s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(out.v[i]);
  return t;
}

FiniteDiffReport module_finite_diff(Module& m, const Tensor& x, bool training,
                                    const FiniteDiffOptions& opts) {
  Tensor input = x;
  const Shape out_shape = m.forward(nullptr, constant(input), training).shape();
  Tensor weights(out_shape);
  std::mt19937_64 rng(opts.seed ^ 0x5eedc0deULL);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : weights.data()) v = u(rng);

  m.zero_grad();
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var in = tape.leaf(input);
    tape.backward(m.forward(&tape, in, training), weights);
    analytic.push_back(in.grad().empty() ? Tensor(input.shape()) : in.grad());
  }
  std::vector<Tensor*> tensors{&input};
  for (Parameter* p : m.parameters()) {
    tensors.push_back(&p->value);
    analytic.push_back(p->grad.empty() ? Tensor(p->value.shape()) : p->grad);
  }
  auto evaluate = [&]() {
    const auto [out, pattern] = reference_run(m, input, training);
    double f = 0.0;
    for (std::size_t i = 0; i < out.v.size(); ++i) f += out.v[i] * weights[i];
    return FdSample{f, pattern};
  };
  return compare_central_differences(tensors, analytic, evaluate, opts);
}

}  // namespace gcnkit
