#include "gcnkit/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gcnkit/error.hpp"

namespace gcnkit {
namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::array<std::array<float, 3>, kShapeVocabulary> kPalette{{
    {0.85f, 0.20f, 0.20f},
    {0.20f, 0.75f, 0.25f},
    {0.20f, 0.30f, 0.85f},
    {0.85f, 0.80f, 0.20f},
    {0.75f, 0.25f, 0.80f},
    {0.20f, 0.80f, 0.80f},
}};

struct Placed {
  int y0, x0, side;
};

bool inside(ShapeKind kind, double py, double px, const Placed& p) {
  const double r = p.side / 2.0;
  const double dy = py - (p.y0 + r);
  const double dx = px - (p.x0 + r);
  switch (kind) {
    case ShapeKind::disk:
      return dy * dy + dx * dx <= r * r;
    case ShapeKind::square:
      return std::abs(dy) <= r && std::abs(dx) <= r;
    case ShapeKind::triangle: {
      const double t = (py - p.y0) / p.side;
      return t >= 0.0 && t <= 1.0 && std::abs(dx) <= r * t;
    }
    case ShapeKind::cross:
      return std::abs(dy) <= r && std::abs(dx) <= r &&
             (std::abs(dy) <= r / 3.0 || std::abs(dx) <= r / 3.0);
    case ShapeKind::ring: {
      const double d2 = dy * dy + dx * dx;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case ShapeKind::diamond:
      return std::abs(dy) + std::abs(dx) <= r;
  }
  return false;
}

void check_pnm_write(std::ofstream& out, const std::string& path) {
  if (!out) throw InputError("cannot write " + path);
}

// Reads "P?" header fields, skipping '#' comments.
std::ifstream open_pnm(const std::string& path, const char* magic, int& w, int& h, int& maxval) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (in) {
      int c = in.peek();
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    in >> t;
    return t;
  };
  if (token() != magic) throw InputError(path + ": expected netpbm " + magic);
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw InputError(path + ": malformed netpbm header");
  }
  in.get();  // single whitespace before the raster
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw InputError(path + ": unsupported netpbm geometry or maxval (need maxval 255)");
  }
  return in;
}

}  // namespace

const char* to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
    case ShapeKind::ring: return "ring";
    case ShapeKind::diamond: return "diamond";
  }
  return "?";
}

SegSample synth_sample(std::uint64_t seed, int index, int size, int classes,
                       const SynthOptions& opts) {
  if (classes < 2) throw InputError("synth_shapes: need K >= 2 (class 0 is background)");
  if (classes > kShapeVocabulary + 1) {
    throw InputError("synth_shapes: K=" + std::to_string(classes) + " exceeds the shape vocabulary (" +
                     std::to_string(kShapeVocabulary) + " shapes + background)");
  }
  if (size <= 0 || size % 32 != 0) {
    throw InputError("synth_shapes: size must be a positive multiple of 32, got " + std::to_string(size));
  }
  if (index < 0) throw InputError("synth_shapes: negative sample index");
  auto rng = make_rng(seed, static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(opts.pixel_noise));

  SegSample s{Tensor(Shape{1, 3, size, size}), LabelMap{}};
  s.label = LabelMap(1, size, size, 0);

  const std::array<float, 3> bg{unit(rng), unit(rng), unit(rng)};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) s.image.at(0, c, y, x) = bg[static_cast<std::size_t>(c)];
    }
  }

  const int lo = std::max(3, static_cast<int>(std::ceil(opts.min_extent * size)));
  const int hi = std::max(lo, static_cast<int>(std::floor(opts.max_extent * size)));
  std::uniform_int_distribution<int> count_dist(1, std::max(1, opts.max_objects));
  std::uniform_int_distribution<int> side_dist(lo, hi);
  std::uniform_int_distribution<int> class_dist(1, classes - 1);
  const int wanted = count_dist(rng);
  std::vector<Placed> placed;
  for (int attempt = 0; attempt < 200 && static_cast<int>(placed.size()) < wanted; ++attempt) {
    const int side = side_dist(rng);
    std::uniform_int_distribution<int> pos(0, size - side);
    const Placed p{pos(rng), pos(rng), side};
    const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Placed& q) {
      return p.y0 < q.y0 + q.side + 1 && q.y0 < p.y0 + p.side + 1 && p.x0 < q.x0 + q.side + 1 &&
             q.x0 < p.x0 + p.side + 1;
    });
    if (!clear) continue;
    placed.push_back(p);
    const int cls = class_dist(rng);
    const auto kind = static_cast<ShapeKind>(cls - 1);
    const auto& base = kPalette[static_cast<std::size_t>(cls - 1)];
    std::array<float, 3> color{};
    const auto w = static_cast<float>(opts.class_color_weight);
    for (std::size_t c = 0; c < 3; ++c) color[c] = w * base[c] + (1.0f - w) * unit(rng);
    for (int y = p.y0; y < p.y0 + side; ++y) {
      for (int x = p.x0; x < p.x0 + side; ++x) {
        if (!inside(kind, y + 0.5, x + 0.5, p)) continue;
        s.label.at(0, y, x) = cls;
        for (int c = 0; c < 3; ++c) s.image.at(0, c, y, x) = color[static_cast<std::size_t>(c)];
      }
    }
  }
  for (float& v : s.image.data()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
  return s;
}

Dataset synth_shapes(std::uint64_t seed, int n, int size, int classes, const SynthOptions& opts) {
  if (n < 0) throw InputError("synth_shapes: negative sample count");
  Dataset d;
  d.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) d.push_back(synth_sample(seed, i, size, classes, opts));
  return d;
}

SegSample flip_horizontal(const SegSample& s) {
  SegSample out = s;
  const Shape sh = s.image.shape();
  for (int n = 0; n < sh.n; ++n) {
    for (int c = 0; c < sh.c; ++c) {
      for (int y = 0; y < sh.h; ++y) {
        for (int x = 0; x < sh.w; ++x) out.image.at(n, c, y, x) = s.image.at(n, c, y, sh.w - 1 - x);
      }
    }
  }
  for (int n = 0; n < s.label.n; ++n) {
    for (int y = 0; y < s.label.h; ++y) {
      for (int x = 0; x < s.label.w; ++x) out.label.at(n, y, x) = s.label.at(n, y, s.label.w - 1 - x);
    }
  }
  return out;
}

SegSample subtract_mean(const SegSample& s) {
  SegSample out = s;
  const Shape sh = s.image.shape();
  for (int n = 0; n < sh.n; ++n) {
    for (int c = 0; c < sh.c; ++c) {
      double acc = 0.0;
      for (int y = 0; y < sh.h; ++y) {
        for (int x = 0; x < sh.w; ++x) acc += s.image.at(n, c, y, x);
      }
      const auto mean = static_cast<float>(acc / (static_cast<double>(sh.h) * sh.w));
      for (int y = 0; y < sh.h; ++y) {
        for (int x = 0; x < sh.w; ++x) out.image.at(n, c, y, x) -= mean;
      }
    }
  }
  return out;
}

SegSample augment(const SegSample& s, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x666c6970ULL);
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  return subtract_mean(flip ? flip_horizontal(s) : s);
}

SegSample pad_to_canvas(const SegSample& s, int h, int w) {
  const Shape sh = s.image.shape();
  if (h < sh.h || w < sh.w) {
    throw InputError("canvas " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the " + std::to_string(sh.h) + "x" + std::to_string(sh.w) +
                     " image");
  }
  if (s.label.n != sh.n || s.label.h != sh.h || s.label.w != sh.w) {
    throw ShapeError("image and label shapes differ");
  }
  SegSample out{Tensor(Shape{sh.n, sh.c, h, w}), LabelMap{}};
  out.label = LabelMap(sh.n, h, w, kIgnoreLabel);
  for (int n = 0; n < sh.n; ++n) {
    for (int c = 0; c < sh.c; ++c) {
      for (int y = 0; y < sh.h; ++y) {
        for (int x = 0; x < sh.w; ++x) out.image.at(n, c, y, x) = s.image.at(n, c, y, x);
      }
    }
    for (int y = 0; y < sh.h; ++y) {
      for (int x = 0; x < sh.w; ++x) out.label.at(n, y, x) = s.label.at(n, y, x);
    }
  }
  return out;
}

SegSample make_batch(const std::vector<const SegSample*>& samples) {
  if (samples.empty()) throw InputError("make_batch: no samples");
  const Shape first = samples.front()->image.shape();
  int total = 0;
  for (const SegSample* s : samples) {
    const Shape sh = s->image.shape();
    if (sh.c != first.c || sh.h != first.h || sh.w != first.w) {
      throw ShapeError("make_batch: samples differ in shape (" + first.str() + " vs " + sh.str() + ")");
    }
    total += sh.n;
  }
  SegSample out{Tensor(Shape{total, first.c, first.h, first.w}), LabelMap{}};
  out.label = LabelMap(total, first.h, first.w);
  out.label.data.clear();
  std::size_t at = 0;
  for (const SegSample* s : samples) {
    std::copy(s->image.data().begin(), s->image.data().end(), out.image.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += s->image.numel();
    out.label.data.insert(out.label.data.end(), s->label.data.begin(), s->label.data.end());
  }
  return out;
}

Tensor read_ppm(const std::string& path) {
  int w = 0, h = 0, maxval = 0;
  std::ifstream in = open_pnm(path, "P6", w, h, maxval);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw InputError(path + ": truncated raster");
  Tensor t(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(0, c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
      }
    }
  }
  return t;
}

void write_ppm(const std::string& path, const Tensor& image) {
  const Shape sh = image.shape();
  if (sh.n != 1 || sh.c != 3) throw ShapeError("write_ppm: need a (1, 3, H, W) image, got " + sh.str());
  std::ofstream out(path, std::ios::binary);
  check_pnm_write(out, path);
  out << "P6\n" << sh.w << " " << sh.h << "\n255\n";
  for (int y = 0; y < sh.h; ++y) {
    for (int x = 0; x < sh.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
    }
  }
  check_pnm_write(out, path);
}

LabelMap read_label_pgm(const std::string& path) {
  int w = 0, h = 0, maxval = 0;
  std::ifstream in = open_pnm(path, "P5", w, h, maxval);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw InputError(path + ": truncated raster");
  LabelMap l(1, h, w);
  std::copy(raw.begin(), raw.end(), l.data.begin());
  return l;
}

void write_label_pgm(const std::string& path, const LabelMap& label) {
  if (label.n != 1) throw ShapeError("write_label_pgm: need a single label map");
  std::ofstream out(path, std::ios::binary);
  check_pnm_write(out, path);
  out << "P5\n" << label.w << " " << label.h << "\n255\n";
  for (std::int32_t v : label.data) {
    if (v < 0 || v > 255) throw InputError("write_label_pgm: label " + std::to_string(v) + " out of byte range");
    out.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  check_pnm_write(out, path);
}

void write_heatmap_pgm(const std::string& path, const Tensor& map) {
  const Shape sh = map.shape();
  if (sh.n != 1 || sh.c != 1) throw ShapeError("write_heatmap_pgm: need a (1, 1, H, W) map");
  float peak = 0.0f;
  for (float v : map.data()) peak = std::max(peak, v);
  std::ofstream out(path, std::ios::binary);
  check_pnm_write(out, path);
  out << "P5\n" << sh.w << " " << sh.h << "\n255\n";
  for (float v : map.data()) {
    const float s = peak > 0.0f ? std::clamp(v / peak, 0.0f, 1.0f) : 0.0f;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0f))));
  }
  check_pnm_write(out, path);
}

Dataset load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw InputError("dataset directory not found: " + dir);
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".ppm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw InputError("no .ppm images in " + dir);
  Dataset d;
  for (const fs::path& p : images) {
    fs::path label = p;
    label.replace_extension(".pgm");
    if (!fs::exists(label)) throw InputError("missing label map " + label.string());
    SegSample s{read_ppm(p.string()), read_label_pgm(label.string())};
    if (s.label.h != s.image.shape().h || s.label.w != s.image.shape().w) {
      throw InputError(p.string() + ": image and label sizes differ");
    }
    d.push_back(std::move(s));
  }
  return d;
}

void save_dataset_dir(const std::string& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    write_ppm(dir + "/" + stem + ".ppm", data[i].image);
    write_label_pgm(dir + "/" + stem + ".pgm", data[i].label);
  }
}

}  // namespace gcnkit
