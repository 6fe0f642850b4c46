#include "gcnkit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gcnkit/error.hpp"
#include "gcnkit/ops.hpp"

namespace gcnkit {
namespace {

constexpr double kFar = 1e20;

void check_same(const LabelMap& a, const LabelMap& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w || a.data.size() != b.data.size()) {
    throw ShapeError("label maps differ in shape");
  }
}

// Squared distance transform of a sampled function along one line
// (lower envelope of parabolas).
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto cross = [&](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = cross(q, v[static_cast<std::size_t>(k)]);
    // z[0] = -inf stops the loop at k = 0.
    while (s <= z[static_cast<std::size_t>(k)]) {
      --k;
      s = cross(q, v[static_cast<std::size_t>(k)]);
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[q] = double(q - p) * (q - p) + f[p];
  }
}

// Exact squared Euclidean distance to the nearest `feature` pixel.
std::vector<double> edt_2d(const std::vector<std::uint8_t>& feature, int h, int w) {
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = feature[i] ? 0.0 : kFar;
  std::vector<double> f(static_cast<std::size_t>(std::max(h, w)));
  std::vector<double> d(f.size());
  std::vector<int> v;
  std::vector<double> z;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(f.data(), d.data(), h, v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < h; ++y) {
    double* row = grid.data() + static_cast<std::size_t>(y) * w;
    std::copy(row, row + w, f.begin());
    edt_1d(f.data(), row, w, v, z);
  }
  return grid;
}

// Exact chessboard distance to the nearest `feature` pixel (two-pass chamfer).
std::vector<double> chessboard_2d(const std::vector<std::uint8_t>& feature, int h, int w) {
  std::vector<double> d(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = feature[i] ? 0.0 : kFar;
  auto at = [&](int y, int x) -> double& { return d[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double& c = at(y, x);
      if (x > 0) c = std::min(c, at(y, x - 1) + 1);
      if (y > 0) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (x + dx >= 0 && x + dx < w) c = std::min(c, at(y - 1, x + dx) + 1);
        }
      }
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      double& c = at(y, x);
      if (x + 1 < w) c = std::min(c, at(y, x + 1) + 1);
      if (y + 1 < h) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (x + dx >= 0 && x + dx < w) c = std::min(c, at(y + 1, x + dx) + 1);
        }
      }
    }
  }
  return d;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw InputError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt, std::int32_t ignore) {
  check_same(pred, gt);
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const std::int32_t g = gt.data[i];
    if (g == ignore) continue;
    const std::int32_t p = pred.data[i];
    if (g < 0 || g >= classes_) throw InputError("ground-truth label " + std::to_string(g) + " out of range");
    if (p < 0 || p >= classes_) throw InputError("predicted label " + std::to_string(p) + " out of range");
    ++counts_[static_cast<std::size_t>(g) * classes_ + p];
  }
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t c : counts_) t += c;
  return t;
}

MetricsReport mean_iou(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.classes = cm.classes();
  r.valid_pixels = cm.total();
  if (r.valid_pixels == 0) throw InputError("mean_iou: no valid pixels");
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < cm.classes(); ++c) {
    const std::int64_t tp = cm.at(c, c);
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < cm.classes(); ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::int64_t uni = tp + fp + fn;
    if (uni == 0) {
      r.per_class_iou.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class_iou.emplace_back(iou);
    acc += iou;
    ++counted;
  }
  r.miou = acc / counted;
  return r;
}

MetricsReport mean_iou(const LabelMap& pred, const LabelMap& gt, int classes, std::int32_t ignore) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt, ignore);
  return mean_iou(cm);
}

RegionMasks boundary_internal_masks(const LabelMap& gt, double d, DistanceMetric metric,
                                    std::int32_t ignore) {
  if (!(d >= 0.0)) throw InputError("boundary distance must be >= 0");
  const int h = gt.h;
  const int w = gt.w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  RegionMasks m;
  m.boundary.assign(gt.data.size(), 0);
  m.internal.assign(gt.data.size(), 0);
  const double limit = metric == DistanceMetric::euclidean ? d * d : d;
  std::vector<std::uint8_t> feature(plane);
  for (int n = 0; n < gt.n; ++n) {
    const std::int32_t* lab = gt.data.data() + static_cast<std::size_t>(n) * plane;
    std::vector<std::int32_t> present;
    for (std::size_t i = 0; i < plane; ++i) {
      if (lab[i] != ignore && std::find(present.begin(), present.end(), lab[i]) == present.end()) {
        present.push_back(lab[i]);
      }
    }
    std::vector<double> dist(plane, kFar);
    for (std::int32_t l : present) {
      bool any = false;
      for (std::size_t i = 0; i < plane; ++i) {
        feature[i] = lab[i] != ignore && lab[i] != l;
        any = any || feature[i];
      }
      if (!any) continue;
      const std::vector<double> dl =
          metric == DistanceMetric::euclidean ? edt_2d(feature, h, w) : chessboard_2d(feature, h, w);
      for (std::size_t i = 0; i < plane; ++i) {
        if (lab[i] == l) dist[i] = dl[i];
      }
    }
    for (std::size_t i = 0; i < plane; ++i) {
      if (lab[i] == ignore) continue;
      const std::size_t at = static_cast<std::size_t>(n) * plane + i;
      if (dist[i] <= limit) {
        m.boundary[at] = 1;
      } else {
        m.internal[at] = 1;
      }
    }
  }
  return m;
}

double region_accuracy(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint8_t>& mask) {
  check_same(pred, gt);
  if (mask.size() != gt.data.size()) throw ShapeError("region mask size differs from the label map");
  std::int64_t total = 0, right = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    right += pred.data[i] == gt.data[i] ? 1 : 0;
  }
  if (total == 0) throw InputError("region_accuracy: empty mask");
  return static_cast<double>(right) / static_cast<double>(total);
}

Tensor multiscale_inference(const SegModel& model, const Tensor& image, const std::vector<double>& scales) {
  if (scales.empty()) throw InputError("multiscale_inference: no scales");
  const Shape is = image.shape();
  const int os = model.output_stride();
  Tensor avg;
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InputError("multiscale_inference: scales must be > 0");
    const int hs = std::max(1, static_cast<int>(std::lround(is.h * s)));
    const int ws = std::max(1, static_cast<int>(std::lround(is.w * s)));
    Var x = constant(image);
    if (hs != is.h || ws != is.w) x = resize_bilinear(x, hs, ws);
    const int ph = (hs + os - 1) / os * os;
    const int pw = (ws + os - 1) / os * os;
    if (ph != hs || pw != ws) x = pad_to(x, ph, pw, 0.0f);
    Var scores = constant(model.predict(x.value()));
    if (ph != hs || pw != ws) scores = crop2d(scores, 0, 0, hs, ws);
    Tensor prob = softmax_channels(scores.value());
    if (hs != is.h || ws != is.w) prob = resize_bilinear(constant(prob), is.h, is.w).value();
    if (avg.empty()) {
      avg = std::move(prob);
    } else {
      avg.add_(prob);
    }
  }
  if (scales.size() > 1) {
    const auto inv = static_cast<float>(1.0 / static_cast<double>(scales.size()));
    for (float& v : avg.data()) v *= inv;
  }
  return avg;
}

LabelMap predict_labels(const SegModel& model, const Tensor& image, const std::vector<double>& scales) {
  return argmax_channels(multiscale_inference(model, image, scales));
}

MetricsReport evaluate(const SegModel& model, const Dataset& data, const EvalOptions& opts) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  ConfusionMatrix cm(model.config().classes);
  std::int64_t b_total = 0, b_right = 0, i_total = 0, i_right = 0;
  for (const SegSample& raw : data) {
    const SegSample s = subtract_mean(raw);
    const LabelMap pred = predict_labels(model, s.image, opts.scales);
    cm.add(pred, s.label);
    const RegionMasks m = boundary_internal_masks(s.label, opts.boundary_d, opts.metric);
    for (std::size_t i = 0; i < m.boundary.size(); ++i) {
      const std::int64_t hit = pred.data[i] == s.label.data[i] ? 1 : 0;
      if (m.boundary[i]) {
        ++b_total;
        b_right += hit;
      } else if (m.internal[i]) {
        ++i_total;
        i_right += hit;
      }
    }
  }
  MetricsReport r = mean_iou(cm);
  r.boundary_pixels = b_total;
  r.internal_pixels = i_total;
  if (b_total > 0) r.boundary_acc = static_cast<double>(b_right) / static_cast<double>(b_total);
  if (i_total > 0) r.internal_acc = static_cast<double>(i_right) / static_cast<double>(i_total);
  return r;
}

}  // namespace gcnkit
