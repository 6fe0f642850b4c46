#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gcnkit/ops.hpp"

namespace gcnkit {

enum class LayerKind { input, conv, deconv, batch_norm, relu, max_pool, add };

const char* to_string(LayerKind kind);

enum class InitRule {
  he_normal,  // N(0, 2 / fan_in)
  zeros,
  bilinear,   // per-channel bilinear upsampling kernel (deconv, ci == co)
};

// One node of a declarative layer graph. Inputs refer to earlier layers, so
// the layer order is a topological order.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<int> inputs;
  int ci = 0;
  int co = 0;
  Hw kernel{1, 1};
  Hw stride{1, 1};
  Hw pad{0, 0};
  bool bias = false;
  InitRule init = InitRule::he_normal;

  bool operator==(const LayerSpec&) const = default;
};

// Builder and container for a DAG of layers. Layer 0 is the graph input.
class LayerGraph {
 public:
  explicit LayerGraph(int in_channels = 3);

  int input() const { return 0; }
  int conv(const std::string& name, int from, int co, Hw kernel, Hw stride = {1, 1},
           Hw pad = {0, 0}, bool bias = false, InitRule init = InitRule::he_normal);
  int deconv(const std::string& name, int from, int co, Hw kernel, Hw stride, Hw pad,
             bool bias = false, InitRule init = InitRule::bilinear);
  int batch_norm(const std::string& name, int from);
  int relu(const std::string& name, int from);
  int max_pool(const std::string& name, int from, int kernel, int stride, int pad = 0);
  int add(const std::string& name, int a, int b);

  // Named endpoints (stage features, score map, ...).
  void mark(const std::string& tag, int layer);
  std::optional<int> find_mark(const std::string& tag) const;
  int marked(const std::string& tag) const;  // throws if missing
  const std::vector<std::pair<std::string, int>>& marks() const { return marks_; }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(int id) const { return layers_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(layers_.size()); }
  int channels(int id) const { return layer(id).co; }
  int in_channels() const { return layers_.front().co; }
  int last() const { return size() - 1; }

  // Spatial extent of every layer's output for a given input extent; throws
  // ShapeError naming the first layer that cannot be evaluated.
  std::vector<Hw> spatial_extents(Hw input) const;

  bool operator==(const LayerGraph&) const = default;

 private:
  int push(LayerSpec spec);

  std::vector<LayerSpec> layers_;
  std::vector<std::pair<std::string, int>> marks_;
};

}  // namespace gcnkit
