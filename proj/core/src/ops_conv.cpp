#include <Eigen/Core>

#include <algorithm>

#include "op_support.hpp"
#include "spinet/ops.hpp"
#include "spinet/parallel.hpp"

namespace spinet {

using detail::finish;
using detail::grad_of;
using detail::ImplPtr;
using detail::new_impl;
using detail::out_grad;
using detail::values_of;
using detail::wants_grad;

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t stride, pad;
  std::int64_t ho, wo;

  std::int64_t patch() const { return cin * kh * kw; }
  std::int64_t pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

ConvGeometry conv_geometry(const char* op, const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                           int pad) {
  detail::require_defined(input, op, "input");
  detail::require_defined(weight, op, "weight");
  detail::require_rank(op, input, 4, "input");
  detail::require_rank(op, weight, 4, "weight");
  detail::require_same_dtype(op, {&input, &weight, &bias});
  if (stride <= 0) throw ConfigError(std::string(op) + ": stride must be positive");
  if (pad < 0) throw ConfigError(std::string(op) + ": padding must be non-negative");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (weight.dim(1) != g.cin) {
    throw ShapeError(std::string(op) + ": weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(g.cin));
  }
  if (bias.defined() && bias.shape() != Shape{g.cout}) {
    throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(g.cout) + "]");
  }
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw ShapeError(std::string(op) + ": kernel larger than padded input");
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// Output pixels per im2col tile; bounds the column buffer to ~4M elements.
std::int64_t tile_pixels(const ConvGeometry& g) {
  const std::int64_t budget = std::int64_t{1} << 22;
  return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(g.patch(), 1), 1, g.pixels());
}

// Output columns [lo, hi) of one kernel tap whose input column lies inside
// the image.
struct ValidSpan {
  std::int64_t lo, hi;
};

ValidSpan valid_columns(const ConvGeometry& g, std::int64_t kx) {
  // ix = ox * stride - pad + kx must satisfy 0 <= ix < w.
  const std::int64_t first = g.pad - kx;
  std::int64_t lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const std::int64_t last = g.w - 1 + g.pad - kx;
  std::int64_t hi = last < 0 ? 0 : last / g.stride + 1;
  lo = std::min(lo, g.wo);
  hi = std::clamp(hi, lo, g.wo);
  return {lo, hi};
}

// Calls fn(row_offset, oy, ox_begin, ox_end) for each output-row segment of
// the pixel range [p0, p1).
template <class F>
void for_row_segments(const ConvGeometry& g, std::int64_t p0, std::int64_t p1, F&& fn) {
  std::int64_t p = p0;
  while (p < p1) {
    const std::int64_t oy = p / g.wo;
    const std::int64_t ox0 = p % g.wo;
    const std::int64_t ox1 = std::min(g.wo, ox0 + (p1 - p));
    fn(p - p0, oy, ox0, ox1);
    p += ox1 - ox0;
  }
}

template <class T>
void im2col(const ConvGeometry& g, const T* image, std::int64_t p0, std::int64_t p1, T* cols) {
  const std::int64_t width = p1 - p0;
  for (std::int64_t kx = 0; kx < g.kw; ++kx) {
    const ValidSpan span = valid_columns(g, kx);
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* plane = image + c * g.h * g.w;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * width;
        for_row_segments(g, p0, p1, [&](std::int64_t off, std::int64_t oy, std::int64_t ox0, std::int64_t ox1) {
          T* dst = row + off - ox0;
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst + ox0, dst + ox1, T(0));
            return;
          }
          const std::int64_t lo = std::clamp(span.lo, ox0, ox1);
          const std::int64_t hi = std::clamp(span.hi, lo, ox1);
          std::fill(dst + ox0, dst + lo, T(0));
          const T* src = plane + iy * g.w - g.pad + kx;
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + hi, dst + ox1, T(0));
        });
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* cols, std::int64_t p0, std::int64_t p1, T* image_grad) {
  const std::int64_t width = p1 - p0;
  // Channel-major order keeps the accumulation order into each input pixel
  // identical to the per-element definition (c, ky, kx, then pixel).
  for (std::int64_t c = 0; c < g.cin; ++c) {
    T* plane = image_grad + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const ValidSpan span = valid_columns(g, kx);
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * width;
        for_row_segments(g, p0, p1, [&](std::int64_t off, std::int64_t oy, std::int64_t ox0, std::int64_t ox1) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) return;
          const std::int64_t lo = std::clamp(span.lo, ox0, ox1);
          const std::int64_t hi = std::clamp(span.hi, lo, ox1);
          const T* src = row + off - ox0;
          T* dst = plane + iy * g.w - g.pad + kx;
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
        });
      }
    }
  }
}

template <class T>
void conv_forward_image(const ConvGeometry& g, const T* image, const T* weight, const T* bias, T* out) {
  ConstMapMat<T> wmat(weight, g.cout, g.patch());
  const std::int64_t tile = tile_pixels(g);
  std::vector<T> cols;
  if (!g.pointwise()) cols.resize(static_cast<std::size_t>(g.patch() * tile));
  for (std::int64_t p0 = 0; p0 < g.pixels(); p0 += tile) {
    const std::int64_t p1 = std::min(g.pixels(), p0 + tile);
    const std::int64_t width = p1 - p0;
    Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> y(out + p0, g.cout, width, Eigen::OuterStride<>(g.pixels()));
    if (g.pointwise()) {
      Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> x(image + p0, g.cin, width,
                                                             Eigen::OuterStride<>(g.pixels()));
      y.noalias() = wmat * x;
    } else {
      im2col(g, image, p0, p1, cols.data());
      y.noalias() = wmat * ConstMapMat<T>(cols.data(), g.patch(), width);
    }
    if (bias) {
      for (std::int64_t o = 0; o < g.cout; ++o) y.row(o).array() += bias[o];
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  const ConvGeometry g = conv_geometry("conv2d", input, weight, bias, stride, pad);
  const bool has_bias = bias.defined();
  return dispatch(input.dtype(), [&]<class T>() {
    auto out = new_impl({g.n, g.cout, g.ho, g.wo}, input.dtype());
    const T* x = values_of<T>(*input.impl_ptr()).data();
    const T* w = values_of<T>(*weight.impl_ptr()).data();
    const T* b = has_bias ? values_of<T>(*bias.impl_ptr()).data() : nullptr;
    T* y = values_of<T>(*out).data();
    parallel_for(g.n, [&](std::int64_t n) {
      conv_forward_image(g, x + n * g.cin * g.h * g.w, w, b, y + n * g.cout * g.pixels());
    });
    std::vector<ImplPtr> inputs{input.impl_ptr(), weight.impl_ptr()};
    if (has_bias) inputs.push_back(bias.impl_ptr());
    return finish(out, "conv2d", inputs, [g](const Tape::Entry& e) {
      const auto& gy = out_grad<T>(*e.output);
      const T* x = values_of<T>(*e.inputs[0]).data();
      const T* w = values_of<T>(*e.inputs[1]).data();
      const bool need_x = wants_grad(e.inputs[0]);
      const bool need_w = wants_grad(e.inputs[1]);
      const bool need_b = e.inputs.size() > 2 && wants_grad(e.inputs[2]);
      const auto wsize = static_cast<std::size_t>(g.cout * g.patch());
      std::vector<std::vector<T>> partial_w(need_w ? static_cast<std::size_t>(g.n) : 0);
      T* gx = need_x ? grad_of<T>(*e.inputs[0]).data() : nullptr;
      ConstMapMat<T> wmat(w, g.cout, g.patch());
      const std::int64_t tile = tile_pixels(g);

      parallel_for(g.n, [&](std::int64_t n) {
        const T* image = x + n * g.cin * g.h * g.w;
        const T* gimg = gy.data() + n * g.cout * g.pixels();
        std::vector<T> cols(static_cast<std::size_t>(g.patch() * tile));
        std::vector<T> dcols(need_x ? cols.size() : 0);
        if (need_w) partial_w[n].assign(wsize, T(0));
        for (std::int64_t p0 = 0; p0 < g.pixels(); p0 += tile) {
          const std::int64_t p1 = std::min(g.pixels(), p0 + tile);
          const std::int64_t width = p1 - p0;
          Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> dy(gimg + p0, g.cout, width,
                                                                  Eigen::OuterStride<>(g.pixels()));
          if (need_w) {
            im2col(g, image, p0, p1, cols.data());
            MapMat<T>(partial_w[n].data(), g.cout, g.patch()).noalias() +=
                dy * ConstMapMat<T>(cols.data(), g.patch(), width).transpose();
          }
          if (need_x) {
            MapMat<T> dc(dcols.data(), g.patch(), width);
            dc.noalias() = wmat.transpose() * dy;
            col2im_add(g, dcols.data(), p0, p1, gx + n * g.cin * g.h * g.w);
          }
        }
      });
      if (need_w) {
        auto& gw = grad_of<T>(*e.inputs[1]);
        for (const auto& part : partial_w)
          for (std::size_t i = 0; i < wsize; ++i) gw[i] += part[i];
      }
      if (need_b) {
        auto& gb = grad_of<T>(*e.inputs[2]);
        for (std::int64_t o = 0; o < g.cout; ++o) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < g.n; ++n) {
            const T* row = gy.data() + (n * g.cout + o) * g.pixels();
            for (std::int64_t p = 0; p < g.pixels(); ++p) acc += row[p];
          }
          gb[o] += static_cast<T>(acc);
        }
      }
    });
  });
}

Tensor conv2d_reference(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  const ConvGeometry g = conv_geometry("conv2d_reference", input, weight, bias, stride, pad);
  const bool has_bias = bias.defined();
  return dispatch(input.dtype(), [&]<class T>() {
    auto out = new_impl({g.n, g.cout, g.ho, g.wo}, input.dtype());
    const auto& x = values_of<T>(*input.impl_ptr());
    const auto& w = values_of<T>(*weight.impl_ptr());
    auto& y = values_of<T>(*out);
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t o = 0; o < g.cout; ++o)
        for (std::int64_t oy = 0; oy < g.ho; ++oy)
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            double acc = has_bias ? static_cast<double>(values_of<T>(*bias.impl_ptr())[o]) : 0.0;
            for (std::int64_t c = 0; c < g.cin; ++c)
              for (std::int64_t ky = 0; ky < g.kh; ++ky)
                for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                  const std::int64_t iy = oy * g.stride - g.pad + ky;
                  const std::int64_t ix = ox * g.stride - g.pad + kx;
                  if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
                  acc += static_cast<double>(x[((n * g.cin + c) * g.h + iy) * g.w + ix]) *
                         static_cast<double>(w[((o * g.cin + c) * g.kh + ky) * g.kw + kx]);
                }
            y[((n * g.cout + o) * g.ho + oy) * g.wo + ox] = static_cast<T>(acc);
          }
    detail::check_finite(*out, "conv2d_reference");
    return Tensor(out);
  });
}

Tensor dynamic_depthwise_conv(const Tensor& x, const Tensor& taps) {
  detail::require_defined(x, "dynamic_depthwise_conv", "x");
  detail::require_defined(taps, "dynamic_depthwise_conv", "taps");
  detail::require_rank("dynamic_depthwise_conv", x, 4, "x");
  detail::require_rank("dynamic_depthwise_conv", taps, 2, "taps");
  detail::require_same_dtype("dynamic_depthwise_conv", {&x, &taps});
  const std::int64_t m = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (taps.dim(0) != m) throw ShapeError("dynamic_depthwise_conv: one filter per leading item required");
  std::int64_t k = 1;
  while (k * k < taps.dim(1)) ++k;
  if (k * k != taps.dim(1)) throw ShapeError("dynamic_depthwise_conv: tap count must be a square");
  if (k % 2 == 0) throw ConfigError("dynamic_depthwise_conv: kernel size must be odd");
  const std::int64_t half = k / 2;
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(x.shape(), x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    const auto& tv = values_of<T>(*taps.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* plane = xv.data() + (i * c + ch) * h * w;
        T* dst = ov.data() + (i * c + ch) * h * w;
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const T tap = tv[i * k * k + ky * k + kx];
            const std::int64_t dy = ky - half, dx = kx - half;
            for (std::int64_t y = std::max<std::int64_t>(0, -dy); y < std::min(h, h - dy); ++y)
              for (std::int64_t xx = std::max<std::int64_t>(0, -dx); xx < std::min(w, w - dx); ++xx)
                dst[y * w + xx] += tap * plane[(y + dy) * w + xx + dx];
          }
      }
    return finish(out, "dynamic_depthwise_conv", {x.impl_ptr(), taps.impl_ptr()},
                  [m, c, h, w, k, half](const Tape::Entry& e) {
                    const auto& g = out_grad<T>(*e.output);
                    const auto& xv = values_of<T>(*e.inputs[0]);
                    const auto& tv = values_of<T>(*e.inputs[1]);
                    const bool need_x = wants_grad(e.inputs[0]);
                    const bool need_t = wants_grad(e.inputs[1]);
                    T* gx = need_x ? grad_of<T>(*e.inputs[0]).data() : nullptr;
                    T* gt = need_t ? grad_of<T>(*e.inputs[1]).data() : nullptr;
                    for (std::int64_t i = 0; i < m; ++i)
                      for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                          const T tap = tv[i * k * k + ky * k + kx];
                          const std::int64_t dy = ky - half, dx = kx - half;
                          double acc = 0.0;
                          for (std::int64_t ch = 0; ch < c; ++ch) {
                            const std::int64_t base = (i * c + ch) * h * w;
                            for (std::int64_t y = std::max<std::int64_t>(0, -dy); y < std::min(h, h - dy); ++y)
                              for (std::int64_t xx = std::max<std::int64_t>(0, -dx); xx < std::min(w, w - dx);
                                   ++xx) {
                                const T gv = g[base + y * w + xx];
                                const std::int64_t src = base + (y + dy) * w + xx + dx;
                                if (need_x) gx[src] += tap * gv;
                                acc += static_cast<double>(gv) * xv[src];
                              }
                          }
                          if (need_t) gt[i * k * k + ky * k + kx] += static_cast<T>(acc);
                        }
                  });
  });
}

}  // namespace spinet
