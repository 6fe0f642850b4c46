#include "gcnkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gcnkit/error.hpp"
#include "gemm.hpp"

namespace gcnkit {
namespace {

using detail::gemm_acc;

struct Window {
  int c, h, w;     // source planes
  int kh, kw;
  ConvGeometry geo;
  int oh, ow;      // window grid
  int rows() const { return c * kh * kw; }
  int cols() const { return oh * ow; }
  bool trivial() const {
    return kh == 1 && kw == 1 && geo.stride == Hw{1, 1} && geo.pad == Hw{0, 0};
  }
};

// col[(ci*kh + ky)*kw + kx][oy*ow + ox] = src[ci][oy*sh - ph + ky][ox*sw - pw + kx]
void im2col(const float* src, const Window& win, float* col) {
  const int sh = win.geo.stride.h, sw = win.geo.stride.w;
  const int ph = win.geo.pad.h, pw = win.geo.pad.w;
  for (int c = 0; c < win.c; ++c) {
    const float* plane = src + static_cast<std::size_t>(c) * win.h * win.w;
    for (int ky = 0; ky < win.kh; ++ky) {
      for (int kx = 0; kx < win.kw; ++kx) {
        float* row = col + (static_cast<std::size_t>(c * win.kh + ky) * win.kw + kx) * win.cols();
        for (int oy = 0; oy < win.oh; ++oy) {
          const int iy = oy * sh - ph + ky;
          float* out = row + static_cast<std::size_t>(oy) * win.ow;
          if (iy < 0 || iy >= win.h) {
            std::fill(out, out + win.ow, 0.0f);
            continue;
          }
          const float* line = plane + static_cast<std::size_t>(iy) * win.w;
          for (int ox = 0; ox < win.ow; ++ox) {
            const int ix = ox * sw - pw + kx;
            out[ox] = (ix >= 0 && ix < win.w) ? line[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: dst += scatter(col).
void col2im(const float* col, const Window& win, float* dst) {
  const int sh = win.geo.stride.h, sw = win.geo.stride.w;
  const int ph = win.geo.pad.h, pw = win.geo.pad.w;
  for (int c = 0; c < win.c; ++c) {
    float* plane = dst + static_cast<std::size_t>(c) * win.h * win.w;
    for (int ky = 0; ky < win.kh; ++ky) {
      for (int kx = 0; kx < win.kw; ++kx) {
        const float* row =
            col + (static_cast<std::size_t>(c * win.kh + ky) * win.kw + kx) * win.cols();
        for (int oy = 0; oy < win.oh; ++oy) {
          const int iy = oy * sh - ph + ky;
          if (iy < 0 || iy >= win.h) continue;
          const float* in = row + static_cast<std::size_t>(oy) * win.ow;
          float* line = plane + static_cast<std::size_t>(iy) * win.w;
          for (int ox = 0; ox < win.ow; ++ox) {
            const int ix = ox * sw - pw + kx;
            if (ix >= 0 && ix < win.w) line[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Unfolded view of one batch item; aliases the source for 1x1 stride-1 convs.
class Unfolded {
 public:
  Unfolded(const float* src, const Window& win) {
    if (win.trivial()) {
      view_ = src;
    } else {
      buf_.resize(static_cast<std::size_t>(win.rows()) * win.cols());
      im2col(src, win, buf_.data());
      view_ = buf_.data();
    }
  }
  const float* data() const { return view_; }

 private:
  std::vector<float> buf_;
  const float* view_ = nullptr;
};

// Scatters col into dst (accumulating); writes directly for trivial windows.
void fold_into(const std::vector<float>& col, const Window& win, float* dst) {
  if (win.trivial()) {
    for (std::size_t i = 0; i < col.size(); ++i) dst[i] += col[i];
  } else {
    col2im(col.data(), win, dst);
  }
}

void check_geometry(const ConvGeometry& geo, int kh, int kw, const char* op) {
  if (kh < 1 || kw < 1) throw ShapeError(std::string(op) + ": kernel extent must be >= 1");
  if (geo.stride.h < 1 || geo.stride.w < 1) {
    throw ShapeError(std::string(op) + ": stride must be >= 1");
  }
  if (geo.pad.h < 0 || geo.pad.w < 0) throw ShapeError(std::string(op) + ": pad must be >= 0");
}

void check_bias(const Var& bias, int channels, const char* op) {
  if (!bias.valid()) return;
  const Shape& s = bias.shape();
  if (s.numel() != static_cast<std::size_t>(channels)) {
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(s.numel()) +
                     " does not match output channels " + std::to_string(channels));
  }
}

void add_bias(Tensor& out, const Tensor& bias) {
  const Shape& s = out.shape();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      float* p = out.ptr() + out.offset(n, c, 0, 0);
      const float b = bias[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
  }
}

void accumulate_bias_grad(const Tensor& gout, Tensor& gbias) {
  const Shape& s = gout.shape();
  for (int c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* p = gout.ptr() + gout.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    gbias[static_cast<std::size_t>(c)] += static_cast<float>(acc);
  }
}

std::vector<float> transposed(int m, int n, const float* src) {
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  detail::transpose(m, n, src, out.data());
  return out;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  check_geometry(geo, ws.h, ws.w, "conv2d");
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs.c) +
                     " do not match weight input channels " + std::to_string(ws.c));
  }
  const int oh = conv_out_extent(xs.h, ws.h, geo.stride.h, geo.pad.h);
  const int ow = conv_out_extent(xs.w, ws.w, geo.stride.w, geo.pad.w);
  if (xs.h + 2 * geo.pad.h < ws.h || oh < 1) {
    throw ShapeError("conv2d: height " + std::to_string(xs.h) + " (pad " +
                     std::to_string(geo.pad.h) + ") smaller than kernel height " +
                     std::to_string(ws.h));
  }
  if (xs.w + 2 * geo.pad.w < ws.w || ow < 1) {
    throw ShapeError("conv2d: width " + std::to_string(xs.w) + " (pad " +
                     std::to_string(geo.pad.w) + ") smaller than kernel width " +
                     std::to_string(ws.w));
  }
  check_bias(bias, ws.n, "conv2d");

  const Window win{xs.c, xs.h, xs.w, ws.h, ws.w, geo, oh, ow};
  const int co = ws.n;
  const int kdim = win.rows();
  Tensor out(Shape{xs.n, co, oh, ow});
  const float* wdata = weight.value().ptr();
  for (int n = 0; n < xs.n; ++n) {
    Unfolded col(x.value().ptr() + x.value().offset(n, 0, 0, 0), win);
    gemm_acc(co, win.cols(), kdim, wdata, col.data(), out.ptr() + out.offset(n, 0, 0, 0));
  }
  if (bias.valid()) add_bias(out, bias.value());

  std::vector<Var> parents{x, weight};
  if (bias.valid()) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [win, co, kdim](Node& self) {
    const Tensor& gout = self.grad;
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    const Tensor& xv = xn.value;
    const int batch = xv.shape().n;
    const int cols = win.cols();
    if (xn.requires_grad()) {
      Tensor& gx = xn.grad_buffer();
      const std::vector<float> wt = transposed(co, kdim, wn.value.ptr());
      std::vector<float> gcol(static_cast<std::size_t>(kdim) * cols);
      for (int n = 0; n < batch; ++n) {
        std::fill(gcol.begin(), gcol.end(), 0.0f);
        gemm_acc(kdim, cols, co, wt.data(), gout.ptr() + gout.offset(n, 0, 0, 0), gcol.data());
        fold_into(gcol, win, gx.ptr() + gx.offset(n, 0, 0, 0));
      }
    }
    if (wn.requires_grad()) {
      Tensor& gw = wn.grad_buffer();
      for (int n = 0; n < batch; ++n) {
        Unfolded col(xv.ptr() + xv.offset(n, 0, 0, 0), win);
        const std::vector<float> colt = transposed(kdim, cols, col.data());
        gemm_acc(co, kdim, cols, gout.ptr() + gout.offset(n, 0, 0, 0), colt.data(), gw.ptr());
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad()) {
      accumulate_bias_grad(gout, self.parents[2]->grad_buffer());
    }
  });
}

Var transposed_conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  check_geometry(geo, ws.h, ws.w, "transposed_conv2d");
  if (xs.c != ws.n) {
    throw ShapeError("transposed_conv2d: input channels " + std::to_string(xs.c) +
                     " do not match weight dimension 0 (" + std::to_string(ws.n) + ")");
  }
  const int oh = deconv_out_extent(xs.h, ws.h, geo.stride.h, geo.pad.h);
  const int ow = deconv_out_extent(xs.w, ws.w, geo.stride.w, geo.pad.w);
  if (oh < 1) throw ShapeError("transposed_conv2d: output height " + std::to_string(oh) + " < 1");
  if (ow < 1) throw ShapeError("transposed_conv2d: output width " + std::to_string(ow) + " < 1");
  check_bias(bias, ws.c, "transposed_conv2d");

  // Conv view: a convolution from (cout, oh, ow) to (cin, xs.h, xs.w).
  const int cin = ws.n;
  const int cout = ws.c;
  const Window win{cout, oh, ow, ws.h, ws.w, geo, xs.h, xs.w};
  const int kdim = win.rows();
  const int cols = win.cols();
  Tensor out(Shape{xs.n, cout, oh, ow});
  {
    const std::vector<float> wt = transposed(cin, kdim, weight.value().ptr());
    std::vector<float> col(static_cast<std::size_t>(kdim) * cols);
    for (int n = 0; n < xs.n; ++n) {
      std::fill(col.begin(), col.end(), 0.0f);
      gemm_acc(kdim, cols, cin, wt.data(), x.value().ptr() + x.value().offset(n, 0, 0, 0),
               col.data());
      fold_into(col, win, out.ptr() + out.offset(n, 0, 0, 0));
    }
  }
  if (bias.valid()) add_bias(out, bias.value());

  std::vector<Var> parents{x, weight};
  if (bias.valid()) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [win, cin, kdim, cols](Node& self) {
    const Tensor& gout = self.grad;
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    const int batch = gout.shape().n;
    for (int n = 0; n < batch; ++n) {
      Unfolded gcol(gout.ptr() + gout.offset(n, 0, 0, 0), win);
      if (xn.requires_grad()) {
        Tensor& gx = xn.grad_buffer();
        gemm_acc(cin, cols, kdim, wn.value.ptr(), gcol.data(), gx.ptr() + gx.offset(n, 0, 0, 0));
      }
      if (wn.requires_grad()) {
        Tensor& gw = wn.grad_buffer();
        const std::vector<float> gcolt = transposed(kdim, cols, gcol.data());
        gemm_acc(cin, kdim, cols, xn.value.ptr() + xn.value.offset(n, 0, 0, 0), gcolt.data(),
                 gw.ptr());
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad()) {
      accumulate_bias_grad(gout, self.parents[2]->grad_buffer());
    }
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
  if (kernel < 1 || stride < 1) throw ShapeError("max_pool2d: kernel and stride must be >= 1");
  if (pad < 0 || 2 * pad > kernel) {
    throw ShapeError("max_pool2d: pad must lie in [0, kernel/2]");
  }
  const Shape& xs = x.shape();
  if (xs.h + 2 * pad < kernel || xs.w + 2 * pad < kernel) {
    throw ShapeError("max_pool2d: window " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(xs.h + 2 * pad) + "x" + std::to_string(xs.w + 2 * pad));
  }
  const int oh = conv_out_extent(xs.h, kernel, stride, pad);
  const int ow = conv_out_extent(xs.w, kernel, stride, pad);
  Tensor out(Shape{xs.n, xs.c, oh, ow});
  std::vector<std::uint32_t> argmax(out.numel());
  const Tensor& xv = x.value();
  std::size_t o = 0;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t base = xv.offset(n, c, 0, 0);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = std::numeric_limits<std::size_t>::max();
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= xs.h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= xs.w) continue;
              const std::size_t i = base + static_cast<std::size_t>(iy) * xs.w + ix;
              if (best_i == std::numeric_limits<std::size_t>::max() || xv[i] > best) {
                best = xv[i];
                best_i = i;
              }
            }
          }
          out[o] = best;
          argmax[o] = static_cast<std::uint32_t>(best_i);
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad()) return;
    Tensor& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad()) return;
    Tensor& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      if (xn.value[i] > 0.0f) gx[i] += self.grad[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor out = a.value();
  out.add_(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad()) p->grad_buffer().add_(self.grad);
    }
  });
}

Var scale(const Var& x, float factor) {
  Tensor out = x.value();
  for (float& v : out.data()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad()) return;
    Tensor& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += factor * self.grad[i];
  });
}

namespace {

// Copies the window of src starting at (y0, x0) with dst's spatial extent;
// positions outside src keep dst's existing values.
void copy_window(const Tensor& src, int y0, int x0, Tensor& dst, bool accumulate) {
  const Shape& s = src.shape();
  const Shape& d = dst.shape();
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      for (int y = 0; y < d.h; ++y) {
        const int sy = y + y0;
        if (sy < 0 || sy >= s.h) continue;
        for (int x = 0; x < d.w; ++x) {
          const int sx = x + x0;
          if (sx < 0 || sx >= s.w) continue;
          if (accumulate) {
            dst.at(n, c, y, x) += src.at(n, c, sy, sx);
          } else {
            dst.at(n, c, y, x) = src.at(n, c, sy, sx);
          }
        }
      }
    }
  }
}

Var place(const Var& x, int top, int left, int h, int w, float value) {
  const Shape& xs = x.shape();
  Tensor out(Shape{xs.n, xs.c, h, w}, value);
  copy_window(x.value(), -top, -left, out, false);
  return make_result(std::move(out), {x}, [top, left](Node& self) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad()) return;
    copy_window(self.grad, top, left, xn.grad_buffer(), true);
  });
}

}  // namespace

Var pad2d(const Var& x, int ph, int pw, float value) {
  if (ph < 0 || pw < 0) throw ShapeError("pad2d: pads must be >= 0");
  const Shape& xs = x.shape();
  return place(x, ph, pw, xs.h + 2 * ph, xs.w + 2 * pw, value);
}

Var pad_to(const Var& x, int h, int w, float value) {
  const Shape& xs = x.shape();
  if (h < xs.h || w < xs.w) {
    throw ShapeError("pad_to: target " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than input " + std::to_string(xs.h) + "x" + std::to_string(xs.w));
  }
  return place(x, 0, 0, h, w, value);
}

Var crop2d(const Var& x, int y0, int x0, int h, int w) {
  const Shape& xs = x.shape();
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > xs.h || x0 + w > xs.w) {
    throw ShapeError("crop2d: window out of bounds for " + xs.str());
  }
  return place(x, -y0, -x0, h, w, 0.0f);
}

namespace {

struct Taps {
  std::vector<int> lo, hi;
  std::vector<float> frac;
};

Taps bilinear_taps(int in, int out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = static_cast<float>(src - lo);
  }
  return t;
}

}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: target must be >= 1x1");
  const Shape& xs = x.shape();
  if (xs.h < 1 || xs.w < 1) throw ShapeError("resize_bilinear: empty input " + xs.str());
  Taps ty = bilinear_taps(xs.h, out_h);
  Taps tx = bilinear_taps(xs.w, out_w);
  Tensor out(Shape{xs.n, xs.c, out_h, out_w});
  const Tensor& xv = x.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int y = 0; y < out_h; ++y) {
        const float fy = ty.frac[y];
        for (int xo = 0; xo < out_w; ++xo) {
          const float fx = tx.frac[xo];
          const float top = xv.at(n, c, ty.lo[y], tx.lo[xo]) * (1 - fx) +
                            xv.at(n, c, ty.lo[y], tx.hi[xo]) * fx;
          const float bottom = xv.at(n, c, ty.hi[y], tx.lo[xo]) * (1 - fx) +
                               xv.at(n, c, ty.hi[y], tx.hi[xo]) * fx;
          out.at(n, c, y, xo) = top * (1 - fy) + bottom * fy;
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [ty = std::move(ty), tx = std::move(tx)](Node& self) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad()) return;
    Tensor& gx = xn.grad_buffer();
    const Shape& gs = self.grad.shape();
    for (int n = 0; n < gs.n; ++n) {
      for (int c = 0; c < gs.c; ++c) {
        for (int y = 0; y < gs.h; ++y) {
          const float fy = ty.frac[y];
          for (int xo = 0; xo < gs.w; ++xo) {
            const float fx = tx.frac[xo];
            const float g = self.grad.at(n, c, y, xo);
            gx.at(n, c, ty.lo[y], tx.lo[xo]) += g * (1 - fy) * (1 - fx);
            gx.at(n, c, ty.lo[y], tx.hi[xo]) += g * (1 - fy) * fx;
            gx.at(n, c, ty.hi[y], tx.lo[xo]) += g * fy * (1 - fx);
            gx.at(n, c, ty.hi[y], tx.hi[xo]) += g * fy * fx;
          }
        }
      }
    }
  });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                 bool training, float eps) {
  const Shape& xs = x.shape();
  const int c = xs.c;
  if (gamma.value().numel() != static_cast<std::size_t>(c) ||
      beta.value().numel() != static_cast<std::size_t>(c)) {
    throw ShapeError("batch_norm2d: gamma/beta length must equal channels " + std::to_string(c));
  }
  if (!(eps > 0.0f)) throw InputError("batch_norm2d: eps must be > 0");
  const Shape stat_shape{1, c, 1, 1};
  if (state.running_mean.shape() != stat_shape) state.running_mean = Tensor(stat_shape, 0.0f);
  if (state.running_var.shape() != stat_shape) state.running_var = Tensor(stat_shape, 1.0f);

  const std::size_t count = static_cast<std::size_t>(xs.n) * xs.plane();
  std::vector<float> mean(c), inv_std(c);
  const Tensor& xv = x.value();
  if (training) {
    if (count == 0) throw ShapeError("batch_norm2d: empty batch");
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const float* p = xv.ptr() + xv.offset(n, ch, 0, 0);
        for (std::size_t i = 0; i < xs.plane(); ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const float* p = xv.ptr() + xv.offset(n, ch, 0, 0);
        for (std::size_t i = 0; i < xs.plane(); ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<float>(mu);
      inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
      const float m = state.momentum;
      state.running_mean[ch] = (1 - m) * state.running_mean[ch] + m * static_cast<float>(mu);
      state.running_var[ch] = (1 - m) * state.running_var[ch] + m * static_cast<float>(var);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = static_cast<float>(1.0 / std::sqrt(double{state.running_var[ch]} + eps));
    }
  }

  Tensor xhat(xs);
  Tensor out(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = xv.offset(n, ch, 0, 0);
      const float g = gamma.value()[ch];
      const float b = beta.value()[ch];
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        const float h = (xv[base + i] - mean[ch]) * inv_std[ch];
        xhat[base + i] = h;
        out[base + i] = g * h + b;
      }
    }
  }
  return make_result(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), training](Node& self) {
        const Tensor& gout = self.grad;
        const Shape& s = gout.shape();
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double count = static_cast<double>(s.n) * static_cast<double>(s.plane());
        for (int ch = 0; ch < s.c; ++ch) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t base = gout.offset(n, ch, 0, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) {
              sum_g += gout[base + i];
              sum_gh += static_cast<double>(gout[base + i]) * xhat[base + i];
            }
          }
          if (gn.requires_grad()) gn.grad_buffer()[ch] += static_cast<float>(sum_gh);
          if (bn.requires_grad()) bn.grad_buffer()[ch] += static_cast<float>(sum_g);
          if (!xn.requires_grad()) continue;
          Tensor& gx = xn.grad_buffer();
          const float scale_c = gn.value[ch] * inv_std[ch];
          const double mean_g = sum_g / count;
          const double mean_gh = sum_gh / count;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t base = gout.offset(n, ch, 0, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) {
              if (training) {
                gx[base + i] += scale_c * static_cast<float>(gout[base + i] - mean_g -
                                                             xhat[base + i] * mean_gh);
              } else {
                gx[base + i] += scale_c * gout[base + i];
              }
            }
          }
        }
      });
}

Var softmax_ce_loss(const Var& logits, const LabelMap& labels, std::int32_t ignore_label) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw ShapeError("softmax_ce_loss: label map " + std::to_string(labels.n) + "x" +
                     std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                     " does not match logits " + s.str());
  }
  const Tensor& z = logits.value();
  Tensor probs(s);
  double total = 0.0;
  std::size_t support = 0;
  std::vector<double> row(static_cast<std::size_t>(s.c));
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.c; ++c) m = std::max(m, double{z.at(n, c, y, x)});
        double se = 0.0;
        for (int c = 0; c < s.c; ++c) {
          row[c] = std::exp(z.at(n, c, y, x) - m);
          se += row[c];
        }
        for (int c = 0; c < s.c; ++c) probs.at(n, c, y, x) = static_cast<float>(row[c] / se);
        const std::int32_t label = labels.at(n, y, x);
        if (label == ignore_label) continue;
        if (label < 0 || label >= s.c) {
          throw InputError("softmax_ce_loss: label " + std::to_string(label) + " outside [0, " +
                           std::to_string(s.c) + ")");
        }
        total += (m + std::log(se)) - z.at(n, label, y, x);
        ++support;
      }
    }
  }
  if (support == 0) throw InputError("softmax_ce_loss: empty loss support");
  Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(total / static_cast<double>(support)));
  return make_result(std::move(out), {logits},
                     [probs = std::move(probs), labels, ignore_label, support](Node& self) {
                       Node& zn = *self.parents[0];
                       if (!zn.requires_grad()) return;
                       Tensor& gz = zn.grad_buffer();
                       const Shape& ps = probs.shape();
                       const float g = self.grad[0] / static_cast<float>(support);
                       for (int n = 0; n < ps.n; ++n) {
                         for (int y = 0; y < ps.h; ++y) {
                           for (int x = 0; x < ps.w; ++x) {
                             const std::int32_t label = labels.at(n, y, x);
                             if (label == ignore_label) continue;
                             for (int c = 0; c < ps.c; ++c) {
                               const float target = c == label ? 1.0f : 0.0f;
                               gz.at(n, c, y, x) += g * (probs.at(n, c, y, x) - target);
                             }
                           }
                         }
                       }
                     });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  return make_result(Tensor(Shape{1, 1, 1, 1}, static_cast<float>(acc)), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad()) return;
    Tensor& gx = xn.grad_buffer();
    const float g = self.grad[0];
    for (float& v : gx.data()) v += g;
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.shape() != x.shape()) {
    throw ShapeError("weighted_sum: weights " + weights.shape().str() + " vs " + x.shape().str());
  }
  const double acc = dot(x.value(), weights);
  return make_result(Tensor(Shape{1, 1, 1, 1}, static_cast<float>(acc)), {x},
                     [weights](Node& self) {
                       Node& xn = *self.parents[0];
                       if (!xn.requires_grad()) return;
                       Tensor& gx = xn.grad_buffer();
                       const float g = self.grad[0];
                       for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g * weights[i];
                     });
}

Tensor softmax_channels(const Tensor& logits) {
  const Shape& s = logits.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        float m = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < s.c; ++c) m = std::max(m, logits.at(n, c, y, x));
        double se = 0.0;
        for (int c = 0; c < s.c; ++c) se += std::exp(double{logits.at(n, c, y, x)} - m);
        for (int c = 0; c < s.c; ++c) {
          out.at(n, c, y, x) = static_cast<float>(std::exp(double{logits.at(n, c, y, x)} - m) / se);
        }
      }
    }
  }
  return out;
}

LabelMap argmax_channels(const Tensor& scores) {
  const Shape& s = scores.shape();
  LabelMap out(s.n, s.h, s.w);
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        int best = 0;
        for (int c = 1; c < s.c; ++c) {
          if (scores.at(n, c, y, x) > scores.at(n, best, y, x)) best = c;
        }
        out.at(n, y, x) = best;
      }
    }
  }
  return out;
}

FiniteDiffReport compare_central_differences(const std::vector<Tensor*>& params,
                                             const std::vector<Tensor>& analytic,
                                             const std::function<FdSample()>& evaluate,
                                             const FiniteDiffOptions& opts) {
  FiniteDiffReport report;
  const FdSample mid = evaluate();
  const double center = mid.value;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    if (p.numel() == 0) continue;
    const bool exhaustive = p.numel() <= static_cast<std::size_t>(opts.samples_per_tensor);
    const int want = exhaustive ? static_cast<int>(p.numel()) : opts.samples_per_tensor;
    const int attempts = exhaustive ? want : 8 * want;
    std::uniform_int_distribution<std::size_t> pick(0, p.numel() - 1);
    double peak = 0.0;
    for (float g : analytic[t].data()) peak = std::max(peak, static_cast<double>(std::abs(g)));
    const double floor = std::max(opts.floor, opts.scale_floor * peak);
    int done = 0;
    for (int attempt = 0; attempt < attempts && done < want; ++attempt) {
      const std::size_t i = exhaustive ? static_cast<std::size_t>(attempt) : pick(rng);
      const float orig = p[i];
      const float hi = orig + opts.eps, lo = orig - opts.eps;
      p[i] = hi;
      const FdSample up_s = evaluate();
      p[i] = lo;
      const FdSample down_s = evaluate();
      p[i] = orig;
      if (up_s.pattern != mid.pattern || down_s.pattern != mid.pattern) {
        ++report.skipped;
        continue;
      }
      const double up = up_s.value, down = down_s.value;
      // Actually representable steps.
      const double step_up = static_cast<double>(hi) - orig;
      const double step_down = static_cast<double>(orig) - lo;
      const double numeric = (up - down) / (step_up + step_down);
      if (opts.kink_tol > 0.0) {
        const double right = (up - center) / step_up;
        const double left = (center - down) / step_down;
        const double scale = std::max({std::abs(right), std::abs(left), floor});
        if (std::abs(right - left) > opts.kink_tol * scale) {
          ++report.skipped;
          continue;
        }
      }
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_err || report.worst_tensor < 0) {
        report.max_rel_err = std::max(report.max_rel_err, err);
        report.worst_tensor = static_cast<int>(t);
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      ++report.checked;
      ++done;
    }
  }
  return report;
}

FiniteDiffReport finite_diff_report(const std::function<Var(Tape&, std::vector<Var>&)>& f,
                                    std::vector<Tensor*> params, const FiniteDiffOptions& opts) {
  std::vector<Tensor> analytic;
  Tensor contraction;  // empty for scalar outputs
  {
    Tape tape;
    std::vector<Var> leaves;
    for (Tensor* p : params) leaves.push_back(tape.leaf(*p));
    Var out = f(tape, leaves);
    if (out.value().numel() == 1) {
      tape.backward(out);
    } else {
      std::mt19937_64 rng(opts.seed ^ 0x5eedc0deULL);
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      contraction = Tensor(out.shape());
      for (float& v : contraction.data()) v = u(rng);
      tape.backward(out, contraction);
    }
    for (auto& leaf : leaves) {
      analytic.push_back(leaf.grad().empty() ? Tensor(leaf.shape()) : leaf.grad());
    }
  }
  auto evaluate = [&]() {
    std::vector<Var> inputs;
    for (Tensor* p : params) inputs.push_back(constant(*p));
    Tape tape;
    const Tensor out = f(tape, inputs).value();
    return FdSample{contraction.empty() ? static_cast<double>(out[0]) : dot(out, contraction), 0};
  };

  return compare_central_differences(params, analytic, evaluate, opts);
}

double finite_diff_check(const std::function<Var(Tape&, std::vector<Var>&)>& f,
                         std::vector<Tensor*> params, const FiniteDiffOptions& opts) {
  return finite_diff_report(f, params, opts).max_rel_err;
}

}  // namespace gcnkit
