#include "gcnkit/blocks.hpp"

#include "gcnkit/error.hpp"

namespace gcnkit {
namespace {

void require_odd(int k, const std::string& what) {
  if (k < 1 || k % 2 == 0) {
    throw InputError(what + ": kernel size must be odd and >= 1, got " + std::to_string(k));
  }
}

void require_channels(int c, const std::string& what) {
  if (c < 1) throw InputError(what + ": channel count must be >= 1");
}

}  // namespace

int add_gcn(LayerGraph& g, int from, const GcnSpec& spec, const std::string& name) {
  require_odd(spec.k, name);
  require_channels(spec.co, name);
  if (g.channels(from) != spec.ci) {
    throw ShapeError(name + ": input has " + std::to_string(g.channels(from)) +
                     " channels, block expects " + std::to_string(spec.ci));
  }
  const int k = spec.k;
  const int r = (k - 1) / 2;
  int a = g.conv(name + ".a1", from, spec.co, {1, k}, {1, 1}, {0, r}, spec.bias);
  a = g.conv(name + ".a2", a, spec.co, {k, 1}, {1, 1}, {r, 0}, spec.bias);
  int b = g.conv(name + ".b1", from, spec.co, {k, 1}, {1, 1}, {r, 0}, spec.bias);
  b = g.conv(name + ".b2", b, spec.co, {1, k}, {1, 1}, {0, r}, spec.bias);
  return g.add(name + ".sum", a, b);
}

int add_boundary_refine(LayerGraph& g, int from, const BrSpec& spec, const std::string& name) {
  require_channels(spec.c, name);
  if (g.channels(from) != spec.c) {
    throw ShapeError(name + ": input has " + std::to_string(g.channels(from)) +
                     " channels, block expects " + std::to_string(spec.c));
  }
  int r = g.conv(name + ".conv1", from, spec.c, {3, 3}, {1, 1}, {1, 1}, true);
  r = g.relu(name + ".relu", r);
  r = g.conv(name + ".conv2", r, spec.c, {3, 3}, {1, 1}, {1, 1}, true, InitRule::zeros);
  return g.add(name + ".sum", from, r);
}

int add_trivial_conv(LayerGraph& g, int from, int k, int co, const std::string& name, bool bias) {
  require_odd(k, name);
  require_channels(co, name);
  const int r = (k - 1) / 2;
  return g.conv(name + ".conv", from, co, {k, k}, {1, 1}, {r, r}, bias);
}

int add_pointwise(LayerGraph& g, int from, int co, const std::string& name, bool bias) {
  require_channels(co, name);
  return g.conv(name + ".conv", from, co, {1, 1}, {1, 1}, {0, 0}, bias);
}

int add_conv_stack(LayerGraph& g, int from, const StackSpec& spec, const std::string& name) {
  require_odd(spec.k_eq, name);
  if (spec.k_eq < 3) throw InputError(name + ": stack needs an equivalent kernel >= 3");
  require_channels(spec.co, name);
  const int depth = spec.depth();
  if (depth >= 2) require_channels(spec.m, name);
  int x = from;
  for (int i = 0; i < depth; ++i) {
    const int co = i == depth - 1 ? spec.co : spec.m;
    x = g.conv(name + ".conv" + std::to_string(i + 1), x, co, {3, 3}, {1, 1}, {1, 1}, spec.bias);
  }
  return x;
}

int add_conv_bn_relu(LayerGraph& g, int from, int co, Hw kernel, Hw stride, Hw pad,
                     const std::string& name) {
  int x = g.conv(name, from, co, kernel, stride, pad, false);
  x = g.batch_norm(name + ".bn", x);
  return g.relu(name + ".relu", x);
}

int add_bottleneck(LayerGraph& g, int from, const BottleneckSpec& spec, const std::string& name) {
  if (g.channels(from) != spec.ci) {
    throw ShapeError(name + ": input has " + std::to_string(g.channels(from)) +
                     " channels, block expects " + std::to_string(spec.ci));
  }
  require_channels(spec.mid, name);
  require_channels(spec.co, name);
  if (spec.stride < 1) throw InputError(name + ": stride must be >= 1");
  const Hw s{spec.stride, spec.stride};
  int body = 0;
  if (spec.variant == BottleneckVariant::resnet) {
    body = add_conv_bn_relu(g, from, spec.mid, {1, 1}, s, {0, 0}, name + ".conv1");
    body = add_conv_bn_relu(g, body, spec.mid, {3, 3}, {1, 1}, {1, 1}, name + ".conv2");
  } else {
    require_odd(spec.k, name);
    const int k = spec.k;
    const int r = (k - 1) / 2;
    int a = add_conv_bn_relu(g, from, spec.mid, {1, k}, s, {0, r}, name + ".a1");
    a = add_conv_bn_relu(g, a, spec.mid, {k, 1}, {1, 1}, {r, 0}, name + ".a2");
    int b = add_conv_bn_relu(g, from, spec.mid, {k, 1}, s, {r, 0}, name + ".b1");
    b = add_conv_bn_relu(g, b, spec.mid, {1, k}, {1, 1}, {0, r}, name + ".b2");
    body = g.add(name + ".gcn_sum", a, b);
  }
  body = g.conv(name + ".conv3", body, spec.co, {1, 1}, {1, 1}, {0, 0}, false,
                spec.zero_init_last ? InitRule::zeros : InitRule::he_normal);
  body = g.batch_norm(name + ".conv3.bn", body);
  int shortcut = from;
  if (spec.needs_projection()) {
    shortcut = g.conv(name + ".proj", from, spec.co, {1, 1}, s, {0, 0}, false);
    shortcut = g.batch_norm(name + ".proj.bn", shortcut);
  }
  const int sum = g.add(name + ".sum", body, shortcut);
  return g.relu(name + ".relu", sum);
}

Module make_gcn_block(const GcnSpec& spec) {
  LayerGraph g(spec.ci);
  add_gcn(g, g.input(), spec, "gcn");
  return Module(std::move(g));
}

Module make_boundary_refine(const BrSpec& spec) {
  LayerGraph g(spec.c);
  add_boundary_refine(g, g.input(), spec, "br");
  return Module(std::move(g));
}

Module make_trivial_conv_block(int k, int ci, int co) {
  LayerGraph g(ci);
  add_trivial_conv(g, g.input(), k, co, "conv");
  return Module(std::move(g));
}

Module make_pointwise_block(int ci, int co) {
  LayerGraph g(ci);
  add_pointwise(g, g.input(), co, "pointwise");
  return Module(std::move(g));
}

Module make_conv_stack_block(const StackSpec& spec) {
  LayerGraph g(spec.ci);
  add_conv_stack(g, g.input(), spec, "stack");
  return Module(std::move(g));
}

Module make_bottleneck_block(const BottleneckSpec& spec) {
  LayerGraph g(spec.ci);
  add_bottleneck(g, g.input(), spec, "bottleneck");
  return Module(std::move(g));
}

Tensor compose_gcn_kernel(const Module& m, const std::string& name) {
  const Tensor& a1 = m.parameter(name + ".a1.weight").value;  // (co, ci, 1, k)
  const Tensor& a2 = m.parameter(name + ".a2.weight").value;  // (co, co, k, 1)
  const Tensor& b1 = m.parameter(name + ".b1.weight").value;  // (co, ci, k, 1)
  const Tensor& b2 = m.parameter(name + ".b2.weight").value;  // (co, co, 1, k)
  const int co = a2.shape().n;
  const int mid = a2.shape().c;
  const int ci = a1.shape().c;
  const int k = a1.shape().w;
  Tensor dense(Shape{co, ci, k, k});
  for (int o = 0; o < co; ++o) {
    for (int i = 0; i < ci; ++i) {
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          double acc = 0.0;
          for (int c = 0; c < mid; ++c) {
            acc += static_cast<double>(a2.at(o, c, dy, 0)) * a1.at(c, i, 0, dx);
            acc += static_cast<double>(b2.at(o, c, 0, dx)) * b1.at(c, i, dy, 0);
          }
          dense.at(o, i, dy, dx) = static_cast<float>(acc);
        }
      }
    }
  }
  return dense;
}

}  // namespace gcnkit
