#include "gcnkit/layer_graph.hpp"

#include "gcnkit/error.hpp"

namespace gcnkit {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "input";
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::add: return "add";
  }
  return "?";
}

LayerGraph::LayerGraph(int in_channels) {
  if (in_channels < 1) throw ShapeError("graph input needs at least one channel");
  LayerSpec in;
  in.name = "input";
  in.kind = LayerKind::input;
  in.ci = in_channels;
  in.co = in_channels;
  layers_.push_back(std::move(in));
}

int LayerGraph::push(LayerSpec spec) {
  for (int from : spec.inputs) {
    if (from < 0 || from >= size()) {
      throw ShapeError("layer " + spec.name + " refers to unknown layer " + std::to_string(from));
    }
  }
  layers_.push_back(std::move(spec));
  return last();
}

int LayerGraph::conv(const std::string& name, int from, int co, Hw kernel, Hw stride, Hw pad,
                     bool bias, InitRule init) {
  if (kernel.h < 1 || kernel.w < 1) throw ShapeError(name + ": kernel must be >= 1");
  if (stride.h < 1 || stride.w < 1) throw ShapeError(name + ": stride must be >= 1");
  if (pad.h < 0 || pad.w < 0) throw ShapeError(name + ": pad must be >= 0");
  if (co < 1) throw ShapeError(name + ": output channels must be >= 1");
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::conv;
  s.inputs = {from};
  s.ci = layer(from).co;
  s.co = co;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.bias = bias;
  s.init = init;
  return push(std::move(s));
}

int LayerGraph::deconv(const std::string& name, int from, int co, Hw kernel, Hw stride, Hw pad,
                       bool bias, InitRule init) {
  if (kernel.h < 1 || kernel.w < 1) throw ShapeError(name + ": kernel must be >= 1");
  if (stride.h < 1 || stride.w < 1) throw ShapeError(name + ": stride must be >= 1");
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::deconv;
  s.inputs = {from};
  s.ci = layer(from).co;
  s.co = co;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.bias = bias;
  s.init = init;
  if (init == InitRule::bilinear && s.ci != s.co) {
    throw ShapeError(name + ": bilinear init needs equal input and output channels");
  }
  return push(std::move(s));
}

int LayerGraph::batch_norm(const std::string& name, int from) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::batch_norm;
  s.inputs = {from};
  s.ci = s.co = layer(from).co;
  return push(std::move(s));
}

int LayerGraph::relu(const std::string& name, int from) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::relu;
  s.inputs = {from};
  s.ci = s.co = layer(from).co;
  return push(std::move(s));
}

int LayerGraph::max_pool(const std::string& name, int from, int kernel, int stride, int pad) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::max_pool;
  s.inputs = {from};
  s.ci = s.co = layer(from).co;
  s.kernel = {kernel, kernel};
  s.stride = {stride, stride};
  s.pad = {pad, pad};
  return push(std::move(s));
}

int LayerGraph::add(const std::string& name, int a, int b) {
  if (layer(a).co != layer(b).co) {
    throw ShapeError(name + ": residual add of " + std::to_string(layer(a).co) + " and " +
                     std::to_string(layer(b).co) + " channels");
  }
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::add;
  s.inputs = {a, b};
  s.ci = s.co = layer(a).co;
  return push(std::move(s));
}

void LayerGraph::mark(const std::string& tag, int id) {
  for (auto& [t, l] : marks_) {
    if (t == tag) {
      l = id;
      return;
    }
  }
  marks_.emplace_back(tag, id);
}

std::optional<int> LayerGraph::find_mark(const std::string& tag) const {
  for (const auto& [t, l] : marks_) {
    if (t == tag) return l;
  }
  return std::nullopt;
}

int LayerGraph::marked(const std::string& tag) const {
  if (auto id = find_mark(tag)) return *id;
  throw Error("layer graph has no endpoint named '" + tag + "'");
}

std::vector<Hw> LayerGraph::spatial_extents(Hw input) const {
  std::vector<Hw> ext(layers_.size());
  ext[0] = input;
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const Hw in = ext[static_cast<std::size_t>(l.inputs[0])];
    Hw out = in;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::max_pool:
        out = {conv_out_extent(in.h, l.kernel.h, l.stride.h, l.pad.h),
               conv_out_extent(in.w, l.kernel.w, l.stride.w, l.pad.w)};
        if (in.h + 2 * l.pad.h < l.kernel.h || in.w + 2 * l.pad.w < l.kernel.w || out.h < 1 ||
            out.w < 1) {
          throw ShapeError(l.name + ": input " + std::to_string(in.h) + "x" +
                           std::to_string(in.w) + " too small for kernel " +
                           std::to_string(l.kernel.h) + "x" + std::to_string(l.kernel.w));
        }
        break;
      case LayerKind::deconv:
        out = {deconv_out_extent(in.h, l.kernel.h, l.stride.h, l.pad.h),
               deconv_out_extent(in.w, l.kernel.w, l.stride.w, l.pad.w)};
        break;
      case LayerKind::add: {
        const Hw other = ext[static_cast<std::size_t>(l.inputs[1])];
        if (!(other == in)) {
          throw ShapeError(l.name + ": add of " + std::to_string(in.h) + "x" +
                           std::to_string(in.w) + " and " + std::to_string(other.h) + "x" +
                           std::to_string(other.w));
        }
        break;
      }
      default:
        break;
    }
    ext[i] = out;
  }
  return ext;
}

}  // namespace gcnkit
