#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gcnkit {

enum class StageBlock { plain, bottleneck, bottleneck_gcn };
enum class HeadKind { gcn, pointwise, conv, stack };
enum class BackboneVariant { tiny, resnet50, resnet50_gcn };

const char* to_string(StageBlock b);
const char* to_string(HeadKind h);
const char* to_string(BackboneVariant v);
HeadKind parse_head_kind(std::string_view s);
BackboneVariant parse_variant(std::string_view s);

// conv + BN + ReLU, or a max pool, ahead of the first stage.
struct StemLayer {
  enum class Kind { conv, max_pool };
  Kind kind = Kind::conv;
  std::string name;
  int k = 3;
  int out = 0;  // conv only
  int stride = 1;
  int pad = -1;  // -1: (k - 1) / 2

  int effective_pad() const { return pad >= 0 ? pad : (k - 1) / 2; }
  bool operator==(const StemLayer&) const = default;
};

struct StageSpec {
  std::string name;
  int repeat = 1;
  StageBlock block = StageBlock::plain;
  int k = 3;    // bottleneck_gcn kernel
  int mid = 0;  // bottleneck width
  int out = 0;
  int stride = 1;

  bool operator==(const StageSpec&) const = default;
};

struct HeadSpec {
  HeadKind kind = HeadKind::gcn;
  int k = 15;
  int classes = 21;
  bool br = true;
  int m = 0;          // stack head mid-channels
  int fusion_br = 1;  // boundary refinements after each fusion add

  bool operator==(const HeadSpec&) const = default;
};

// Declarative network description. Text form, one layer per line, '#'
// comments:
//   input channels=3
//   conv conv1 k=7 out=64 stride=2 [pad=3]
//   maxpool pool1 k=3 stride=2 [pad=1]
//   stage res4 repeat=6 block=bottleneck_gcn k=5 mid=85 out=1024 stride=2
//   head gcn k=15 classes=21 br=true [m=210] [fusion_br=1]
struct ArchSpec {
  int in_channels = 3;
  std::vector<StemLayer> stem;
  std::vector<StageSpec> stages;
  std::optional<HeadSpec> head;

  bool operator==(const ArchSpec&) const = default;
};

// Throws ParseError citing the offending line.
ArchSpec parse_arch(std::string_view text);
ArchSpec load_arch(const std::string& path);
std::string format_arch(const ArchSpec& spec);

ArchSpec builtin_arch(BackboneVariant variant);

// Cumulative output stride after each stage.
std::vector<int> stage_strides(const ArchSpec& spec);

}  // namespace gcnkit
