#include "gcnkit/arch.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gcnkit/error.hpp"

namespace gcnkit {

const char* to_string(StageBlock b) {
  switch (b) {
    case StageBlock::plain: return "plain";
    case StageBlock::bottleneck: return "bottleneck";
    case StageBlock::bottleneck_gcn: return "bottleneck_gcn";
  }
  return "?";
}

const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::gcn: return "gcn";
    case HeadKind::pointwise: return "pointwise";
    case HeadKind::conv: return "conv";
    case HeadKind::stack: return "stack";
  }
  return "?";
}

const char* to_string(BackboneVariant v) {
  switch (v) {
    case BackboneVariant::tiny: return "tiny";
    case BackboneVariant::resnet50: return "resnet50";
    case BackboneVariant::resnet50_gcn: return "resnet50_gcn";
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "gcn") return HeadKind::gcn;
  if (s == "pointwise") return HeadKind::pointwise;
  if (s == "conv") return HeadKind::conv;
  if (s == "stack") return HeadKind::stack;
  throw InputError("unknown head kind '" + std::string(s) + "' (gcn|pointwise|conv|stack)");
}

BackboneVariant parse_variant(std::string_view s) {
  if (s == "tiny") return BackboneVariant::tiny;
  if (s == "resnet50") return BackboneVariant::resnet50;
  if (s == "resnet50_gcn") return BackboneVariant::resnet50_gcn;
  throw InputError("unknown backbone variant '" + std::string(s) +
                   "' (tiny|resnet50|resnet50_gcn)");
}

namespace {

class Fields {
 public:
  Fields(std::size_t line, const std::vector<std::string>& tokens, std::size_t first)
      : line_(line) {
    for (std::size_t i = first; i < tokens.size(); ++i) {
      const auto eq = tokens[i].find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError(line, "expected key=value, got '" + tokens[i] + "'");
      }
      const std::string key = tokens[i].substr(0, eq);
      if (values_.contains(key)) throw ParseError(line, "duplicate key '" + key + "'");
      values_[key] = tokens[i].substr(eq + 1);
    }
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  int integer(const std::string& key, std::optional<int> fallback = std::nullopt) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ParseError(line_, "missing required key '" + key + "'");
    }
    int v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(line_, "key '" + key + "' expects an integer, got '" + s + "'");
    }
    return v;
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ParseError(line_, "missing required key '" + key + "'");
    }
    return it->second;
  }

  bool boolean(const std::string& key, bool fallback) {
    const std::string s = text(key, fallback ? "true" : "false");
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ParseError(line_, "key '" + key + "' expects true|false, got '" + s + "'");
  }

  void finish() const {
    for (const auto& [k, v] : values_) {
      if (!used_.contains(k)) throw ParseError(line_, "unknown key '" + k + "'");
    }
  }

 private:
  std::size_t line_;
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

void require_positive(std::size_t line, int v, const char* what) {
  if (v < 1) throw ParseError(line, std::string(what) + " must be >= 1");
}

}  // namespace

ArchSpec parse_arch(std::string_view text) {
  ArchSpec spec;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  std::set<std::string> names;
  bool seen_input = false;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream words(raw);
    std::vector<std::string> tok;
    for (std::string w; words >> w;) tok.push_back(w);
    if (tok.empty()) continue;
    const std::string& kw = tok[0];
    auto take_name = [&]() -> std::string {
      if (tok.size() < 2 || tok[1].find('=') != std::string::npos) {
        throw ParseError(line, "'" + kw + "' needs a name");
      }
      if (!names.insert(tok[1]).second) throw ParseError(line, "duplicate name '" + tok[1] + "'");
      return tok[1];
    };
    if (spec.head && kw != "head") throw ParseError(line, "'" + kw + "' after the head line");
    if (kw == "input") {
      if (seen_input || !spec.stem.empty() || !spec.stages.empty()) {
        throw ParseError(line, "'input' must come first and only once");
      }
      Fields f(line, tok, 1);
      spec.in_channels = f.integer("channels");
      require_positive(line, spec.in_channels, "channels");
      f.finish();
      seen_input = true;
    } else if (kw == "conv" || kw == "maxpool") {
      if (!spec.stages.empty()) throw ParseError(line, "stem layers must precede stages");
      StemLayer s;
      s.kind = kw == "conv" ? StemLayer::Kind::conv : StemLayer::Kind::max_pool;
      s.name = take_name();
      Fields f(line, tok, 2);
      s.k = f.integer("k");
      if (s.kind == StemLayer::Kind::conv) {
        s.out = f.integer("out");
        require_positive(line, s.out, "out");
      }
      s.stride = f.integer("stride", 1);
      s.pad = f.integer("pad", -1);
      require_positive(line, s.k, "k");
      require_positive(line, s.stride, "stride");
      if (s.pad < -1) throw ParseError(line, "pad must be >= 0");
      f.finish();
      spec.stem.push_back(s);
    } else if (kw == "stage") {
      StageSpec s;
      s.name = take_name();
      Fields f(line, tok, 2);
      s.repeat = f.integer("repeat", 1);
      const std::string block = f.text("block");
      if (block == "plain") {
        s.block = StageBlock::plain;
      } else if (block == "bottleneck") {
        s.block = StageBlock::bottleneck;
      } else if (block == "bottleneck_gcn") {
        s.block = StageBlock::bottleneck_gcn;
      } else {
        throw ParseError(line, "unknown block '" + block + "' (plain|bottleneck|bottleneck_gcn)");
      }
      s.k = f.integer("k", s.block == StageBlock::bottleneck_gcn ? std::nullopt
                                                                 : std::optional<int>(3));
      s.mid = f.integer("mid", s.block == StageBlock::plain ? std::optional<int>(0) : std::nullopt);
      s.out = f.integer("out");
      s.stride = f.integer("stride", 1);
      require_positive(line, s.repeat, "repeat");
      require_positive(line, s.out, "out");
      require_positive(line, s.stride, "stride");
      if (s.block != StageBlock::plain) require_positive(line, s.mid, "mid");
      if (s.k < 1 || s.k % 2 == 0) throw ParseError(line, "k must be odd and >= 1");
      f.finish();
      spec.stages.push_back(s);
    } else if (kw == "head") {
      if (spec.head) throw ParseError(line, "only one head line allowed");
      if (spec.stages.empty()) throw ParseError(line, "head needs at least one stage before it");
      if (tok.size() < 2 || tok[1].find('=') != std::string::npos) {
        throw ParseError(line, "'head' needs a kind (gcn|pointwise|conv|stack)");
      }
      HeadSpec h;
      try {
        h.kind = parse_head_kind(tok[1]);
      } catch (const InputError& e) {
        throw ParseError(line, e.what());
      }
      Fields f(line, tok, 2);
      h.k = f.integer("k", h.kind == HeadKind::pointwise ? std::optional<int>(1) : std::nullopt);
      h.classes = f.integer("classes");
      h.br = f.boolean("br", false);
      h.m = f.integer("m", h.kind == HeadKind::stack ? std::nullopt : std::optional<int>(0));
      h.fusion_br = f.integer("fusion_br", 1);
      if (h.k < 1 || h.k % 2 == 0) throw ParseError(line, "k must be odd and >= 1");
      if (h.classes < 2) throw ParseError(line, "classes must be >= 2");
      if (h.fusion_br < 0) throw ParseError(line, "fusion_br must be >= 0");
      f.finish();
      spec.head = h;
    } else {
      throw ParseError(line, "unknown line kind '" + kw + "' (input|conv|maxpool|stage|head)");
    }
  }
  if (spec.stages.empty()) throw ParseError(line == 0 ? 1 : line, "architecture has no stages");
  std::vector<int> strides = stage_strides(spec);
  for (std::size_t i = 1; i < strides.size(); ++i) {
    if (strides[i] <= strides[i - 1]) {
      throw ParseError(line, "stage output strides must strictly increase (stage '" +
                                 spec.stages[i].name + "' has stride " +
                                 std::to_string(strides[i]) + ")");
    }
  }
  return spec;
}

ArchSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open architecture file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_arch(buf.str());
}

std::string format_arch(const ArchSpec& spec) {
  std::ostringstream out;
  out << "input channels=" << spec.in_channels << "\n";
  for (const auto& s : spec.stem) {
    if (s.kind == StemLayer::Kind::conv) {
      out << "conv " << s.name << " k=" << s.k << " out=" << s.out << " stride=" << s.stride;
    } else {
      out << "maxpool " << s.name << " k=" << s.k << " stride=" << s.stride;
    }
    if (s.pad >= 0) out << " pad=" << s.pad;
    out << "\n";
  }
  for (const auto& s : spec.stages) {
    out << "stage " << s.name << " repeat=" << s.repeat << " block=" << to_string(s.block);
    if (s.block == StageBlock::bottleneck_gcn) out << " k=" << s.k;
    if (s.block != StageBlock::plain) out << " mid=" << s.mid;
    out << " out=" << s.out << " stride=" << s.stride << "\n";
  }
  if (spec.head) {
    const HeadSpec& h = *spec.head;
    out << "head " << to_string(h.kind) << " k=" << h.k << " classes=" << h.classes
        << " br=" << (h.br ? "true" : "false");
    if (h.kind == HeadKind::stack) out << " m=" << h.m;
    if (h.fusion_br != 1) out << " fusion_br=" << h.fusion_br;
    out << "\n";
  }
  return out.str();
}

ArchSpec builtin_arch(BackboneVariant variant) {
  ArchSpec a;
  a.in_channels = 3;
  switch (variant) {
    case BackboneVariant::tiny:
      a.stem.push_back({StemLayer::Kind::conv, "stem", 3, 16, 2, -1});
      a.stages = {{"s1", 2, StageBlock::plain, 3, 0, 16, 2},
                  {"s2", 2, StageBlock::plain, 3, 0, 32, 2},
                  {"s3", 2, StageBlock::plain, 3, 0, 64, 2},
                  {"s4", 2, StageBlock::plain, 3, 0, 128, 2}};
      break;
    case BackboneVariant::resnet50:
    case BackboneVariant::resnet50_gcn: {
      a.stem.push_back({StemLayer::Kind::conv, "conv1", 7, 64, 2, -1});
      a.stem.push_back({StemLayer::Kind::max_pool, "pool1", 3, 0, 2, -1});
      a.stages = {{"res2", 3, StageBlock::bottleneck, 3, 64, 256, 1},
                  {"res3", 4, StageBlock::bottleneck, 3, 128, 512, 2},
                  {"res4", 6, StageBlock::bottleneck, 3, 256, 1024, 2},
                  {"res5", 3, StageBlock::bottleneck, 3, 512, 2048, 2}};
      if (variant == BackboneVariant::resnet50_gcn) {
        a.stages[2] = {"res4", 6, StageBlock::bottleneck_gcn, 5, 85, 1024, 2};
        a.stages[3] = {"res5", 3, StageBlock::bottleneck_gcn, 7, 128, 2048, 2};
      }
      break;
    }
  }
  return a;
}

std::vector<int> stage_strides(const ArchSpec& spec) {
  int stride = 1;
  for (const auto& s : spec.stem) stride *= s.stride;
  std::vector<int> out;
  for (const auto& s : spec.stages) {
    stride *= s.stride;
    out.push_back(stride);
  }
  return out;
}

}  // namespace gcnkit
