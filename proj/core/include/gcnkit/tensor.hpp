#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gcnkit {

// (batch, channel, height, width)
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense NCHW float tensor with value semantics. Width is the fastest axis.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(float value);
  // this += other (shapes must match)
  void add_(const Tensor& other);

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Inner product accumulated in double.
double dot(const Tensor& a, const Tensor& b);
// max |a - b|
double max_abs_diff(const Tensor& a, const Tensor& b);
// max |a - b| / max(max |b|, tiny)
double max_rel_diff(const Tensor& a, const Tensor& b);

// Integer label map (batch, height, width); 255 marks ignored pixels.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

  std::int32_t& at(int b, int y, int x) {
    return data[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  std::int32_t at(int b, int y, int x) const {
    return data[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const LabelMap&) const = default;
};

inline constexpr std::int32_t kIgnoreLabel = 255;

}  // namespace gcnkit
