#include "gcnkit/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "gcnkit/error.hpp"

namespace gcnkit {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension in " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_(const Tensor& other) {
  if (!(other.shape_ == shape_)) {
    throw ShapeError("add: shape " + other.shape_.str() + " vs " + shape_.str());
  }
  const float* src = other.data_.data();
  float* dst = data_.data();
  const std::size_t count = data_.size();
  for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double scale = 0.0;
  for (std::size_t i = 0; i < b.numel(); ++i) scale = std::max(scale, std::abs(double{b[i]}));
  return max_abs_diff(a, b) / std::max(scale, 1e-30);
}

}  // namespace gcnkit
