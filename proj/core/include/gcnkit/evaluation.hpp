#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gcnkit/data.hpp"
#include "gcnkit/network.hpp"
#include "gcnkit/tensor.hpp"

namespace gcnkit {

// Pixel-level confusion counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  // Skips pixels whose ground truth is `ignore`; other labels must lie in
  // [0, classes).
  void add(const LabelMap& pred, const LabelMap& gt, std::int32_t ignore = kIgnoreLabel);

  int classes() const { return classes_; }
  std::int64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
  }
  std::int64_t total() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct MetricsReport {
  int classes = 0;
  // IoU per class; nullopt when the class has an empty union.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  std::int64_t valid_pixels = 0;
  // Present when a boundary/internal split was computed.
  std::optional<double> boundary_acc;
  std::optional<double> internal_acc;
  std::int64_t boundary_pixels = 0;
  std::int64_t internal_pixels = 0;
};

// IoU_c = TP / (TP + FP + FN), averaged over classes with a nonzero union.
// Throws InputError when no pixel is valid.
MetricsReport mean_iou(const ConfusionMatrix& cm);
MetricsReport mean_iou(const LabelMap& pred, const LabelMap& gt, int classes,
                       std::int32_t ignore = kIgnoreLabel);

enum class DistanceMetric { euclidean, chebyshev };

struct RegionMasks {
  std::vector<std::uint8_t> boundary;  // n * h * w
  std::vector<std::uint8_t> internal;
};

// A valid pixel is on the boundary when its distance (center to center) to
// the nearest valid pixel of a different label is <= d; every other valid
// pixel is internal. Ignored pixels are in neither mask.
RegionMasks boundary_internal_masks(const LabelMap& gt, double d = 7.0,
                                    DistanceMetric metric = DistanceMetric::euclidean,
                                    std::int32_t ignore = kIgnoreLabel);

// Fraction of mask pixels with pred == gt. Throws InputError on an empty mask.
double region_accuracy(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint8_t>& mask);

// Averaged softmax scores (n, K, H, W). Per scale: bilinear resize, pad to a
// multiple of the output stride, forward, crop, softmax, resize back.
Tensor multiscale_inference(const SegModel& model, const Tensor& image,
                            const std::vector<double>& scales = {0.75, 1.0, 1.25});

struct EvalOptions {
  double boundary_d = 7.0;
  DistanceMetric metric = DistanceMetric::euclidean;
  std::vector<double> scales{1.0};
};

// Mean-subtracts each image (as in training), predicts with
// multiscale_inference and accumulates mIoU and the region accuracies over
// the whole dataset.
MetricsReport evaluate(const SegModel& model, const Dataset& data, const EvalOptions& opts = {});
LabelMap predict_labels(const SegModel& model, const Tensor& image,
                        const std::vector<double>& scales = {1.0});

}  // namespace gcnkit
