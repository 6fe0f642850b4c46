#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcnkit/tensor.hpp"

namespace gcnkit {

// One image (1, 3, H, W) in [0, 1] (or mean-subtracted) and its label map
// (1, H, W) with values in [0, K) or kIgnoreLabel.
struct SegSample {
  Tensor image;
  LabelMap label;
};

using Dataset = std::vector<SegSample>;

enum class ShapeKind { disk, square, triangle, cross, ring, diamond };
inline constexpr int kShapeVocabulary = 6;
const char* to_string(ShapeKind s);

struct SynthOptions {
  // Fraction of an object's color drawn from its class palette entry; the
  // rest is a random per-object color.
  double class_color_weight = 0.5;
  double pixel_noise = 0.08;
  // Object side as a fraction of the canvas side.
  double min_extent = 0.25;
  double max_extent = 0.45;
  int max_objects = 3;
};

// Desk-scale stand-in for a segmentation corpus: a noisy colored canvas with
// 1 to max_objects non-overlapping shapes. Class c >= 1 is shape kind c - 1
// with a class-correlated color; class 0 is background. Sample i depends
// only on (seed, i). Requires 2 <= K <= kShapeVocabulary + 1 and size a
// multiple of 32.
SegSample synth_sample(std::uint64_t seed, int index, int size, int classes,
                       const SynthOptions& opts = {});
Dataset synth_shapes(std::uint64_t seed, int n, int size, int classes,
                     const SynthOptions& opts = {});

// Mirror image and label left to right.
SegSample flip_horizontal(const SegSample& s);
// Subtracts each channel's mean from the image.
SegSample subtract_mean(const SegSample& s);
// Horizontal flip with probability 0.5 (coin from `seed`), then mean
// subtraction.
SegSample augment(const SegSample& s, std::uint64_t seed);
// Zero-pads the image and ignore-pads the label at the bottom and right.
SegSample pad_to_canvas(const SegSample& s, int h, int w);

// Stacks equally sized samples into one batch.
SegSample make_batch(const std::vector<const SegSample*>& samples);

// Netpbm I/O: images as binary PPM (P6, maxval 255), label maps as binary
// PGM (P5) holding class indices.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);
LabelMap read_label_pgm(const std::string& path);
void write_label_pgm(const std::string& path, const LabelMap& label);
// Grayscale visualization of a (1, 1, H, W) map, scaled so its maximum is 255.
void write_heatmap_pgm(const std::string& path, const Tensor& map);

// Every <stem>.ppm in `dir` paired with <stem>.pgm, sorted by stem.
Dataset load_dataset_dir(const std::string& dir);
void save_dataset_dir(const std::string& dir, const Dataset& data);

}  // namespace gcnkit
