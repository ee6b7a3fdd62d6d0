#include <algorithm>
#include <cmath>

#include "op_support.hpp"
#include "spinet/ops.hpp"

namespace spinet {

using detail::finish;
using detail::grad_of;
using detail::new_impl;
using detail::out_grad;
using detail::values_of;

namespace {

void require_image(const char* op, const Tensor& x) {
  detail::require_defined(x, op, "x");
  detail::require_rank(op, x, 4, "x");
}

// Interpolation taps along one axis: output o reads `width` source indices
// starting at o * width, with `ref` naming the tap nearest the sample point.
struct AxisTaps {
  int width = 0;
  std::vector<std::int64_t> index;
  std::vector<double> weight;
  std::vector<int> ref;
};

std::int64_t clamp_index(std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); }

AxisTaps linear_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  t.width = 2;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    const auto i0 = static_cast<std::int64_t>(base);
    t.index.push_back(clamp_index(i0, in));
    t.index.push_back(clamp_index(i0 + 1, in));
    t.weight.push_back(1.0 - frac);
    t.weight.push_back(frac);
    t.ref.push_back(frac < 0.5 ? 0 : 1);
  }
  return t;
}

double catmull_rom(double d) {
  constexpr double a = -0.5;
  d = std::abs(d);
  if (d <= 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
  if (d < 2.0) return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a;
  return 0.0;
}

AxisTaps cubic_taps(std::int64_t in, int scale) {
  AxisTaps t;
  t.width = 4;
  const std::int64_t out = in * scale;
  for (std::int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    const auto i0 = static_cast<std::int64_t>(base);
    for (int k = -1; k <= 2; ++k) {
      t.index.push_back(clamp_index(i0 + k, in));
      t.weight.push_back(catmull_rom(frac - k));
    }
    t.ref.push_back(frac < 0.5 ? 1 : 2);
  }
  return t;
}

// Resamples rows, then columns. Each pass computes base + sum w (in - base),
// base being the nearest source sample; the weights sum to one, so constant
// regions come out exact.
Tensor separable_resample(const Tensor& x, const AxisTaps& ty, const AxisTaps& tx, const char* op) {
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = static_cast<std::int64_t>(ty.ref.size());
  const auto ow = static_cast<std::int64_t>(tx.ref.size());
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl({x.dim(0), x.dim(1), oh, ow}, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    std::vector<double> rows(static_cast<std::size_t>(h * ow)), acc(static_cast<std::size_t>(ow));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = xv.data() + p * h * w;
      T* dst = ov.data() + p * oh * ow;
      for (std::int64_t y = 0; y < h; ++y) {
        const T* line = src + y * w;
        double* r = rows.data() + y * ow;
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const auto* xi = &tx.index[ox * tx.width];
          const auto* xw = &tx.weight[ox * tx.width];
          const double base = line[xi[tx.ref[ox]]];
          double sum = 0.0;
          for (int b = 0; b < tx.width; ++b) sum += xw[b] * (line[xi[b]] - base);
          r[ox] = base + sum;
        }
      }
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        const auto* yi = &ty.index[oy * ty.width];
        const auto* yw = &ty.weight[oy * ty.width];
        const double* base = rows.data() + yi[ty.ref[oy]] * ow;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int a = 0; a < ty.width; ++a) {
          const double* r = rows.data() + yi[a] * ow;
          for (std::int64_t ox = 0; ox < ow; ++ox) acc[ox] += yw[a] * (r[ox] - base[ox]);
        }
        for (std::int64_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = static_cast<T>(base[ox] + acc[ox]);
      }
    }
    return finish(out, op, {x.impl_ptr()}, [ty, tx, planes, h, w, oh, ow](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gx = grad_of<T>(*e.inputs[0]);
      std::vector<double> rows(static_cast<std::size_t>(h * ow));
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* gsrc = g.data() + p * oh * ow;
        T* gdst = gx.data() + p * h * w;
        std::fill(rows.begin(), rows.end(), 0.0);
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (int a = 0; a < ty.width; ++a) {
            const double wa = ty.weight[oy * ty.width + a];
            double* r = rows.data() + ty.index[oy * ty.width + a] * ow;
            const T* gl = gsrc + oy * ow;
            for (std::int64_t ox = 0; ox < ow; ++ox) r[ox] += wa * gl[ox];
          }
        for (std::int64_t y = 0; y < h; ++y) {
          const double* r = rows.data() + y * ow;
          T* line = gdst + y * w;
          for (std::int64_t ox = 0; ox < ow; ++ox)
            for (int b = 0; b < tx.width; ++b)
              line[tx.index[ox * tx.width + b]] += static_cast<T>(tx.weight[ox * tx.width + b] * r[ox]);
        }
      }
    });
  });
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
  require_image("pixel_shuffle", x);
  if (r < 1) throw ConfigError("pixel_shuffle: factor must be positive");
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (cin % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(cin) + " not divisible by " + std::to_string(r * r));
  }
  const std::int64_t c = cin / (r * r);
  const std::int64_t oh = h * r, ow = w * r;
  auto src_index = [=](std::int64_t b, std::int64_t ch, std::int64_t y, std::int64_t xx) {
    const std::int64_t dy = y % r, dx = xx % r;
    return ((b * cin + ch * r * r + dy * r + dx) * h + y / r) * w + xx / r;
  };
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl({n, c, oh, ow}, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    std::int64_t o = 0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) ov[o++] = xv[src_index(b, ch, y, xx)];
    return finish(out, "pixel_shuffle", {x.impl_ptr()}, [=](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gx = grad_of<T>(*e.inputs[0]);
      std::int64_t o = 0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx) gx[src_index(b, ch, y, xx)] += g[o++];
    });
  });
}

Tensor space_to_depth(const Tensor& x, int r) {
  require_image("space_to_depth", x);
  if (r < 1) throw ConfigError("space_to_depth: factor must be positive");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % r != 0 || w % r != 0) throw ShapeError("space_to_depth: extents not divisible by factor");
  const std::int64_t oh = h / r, ow = w / r, oc = c * r * r;
  // Exact inverse of pixel_shuffle: output (b, ch*r*r + dy*r + dx, y, x) = input (b, ch, y*r+dy, x*r+dx).
  auto src_index = [=](std::int64_t b, std::int64_t och, std::int64_t y, std::int64_t xx) {
    const std::int64_t ch = och / (r * r), dy = (och / r) % r, dx = och % r;
    return ((b * c + ch) * h + y * r + dy) * w + xx * r + dx;
  };
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl({n, oc, oh, ow}, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    std::int64_t o = 0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < oc; ++ch)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) ov[o++] = xv[src_index(b, ch, y, xx)];
    return finish(out, "space_to_depth", {x.impl_ptr()}, [=](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gx = grad_of<T>(*e.inputs[0]);
      std::int64_t o = 0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < oc; ++ch)
          for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx) gx[src_index(b, ch, y, xx)] += g[o++];
    });
  });
}

Tensor bilinear_resample(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_image("bilinear_resample", x);
  if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resample: output extents must be >= 1");
  if (x.dim(2) < 1 || x.dim(3) < 1) throw ShapeError("bilinear_resample: empty input");
  return separable_resample(x, linear_taps(x.dim(2), out_h), linear_taps(x.dim(3), out_w), "bilinear_resample");
}

Tensor bicubic_resample(const Tensor& x, int scale) {
  require_image("bicubic_resample", x);
  if (scale < 1) throw ConfigError("bicubic_resample: scale must be positive");
  if (x.dim(2) < 1 || x.dim(3) < 1) throw ShapeError("bicubic_resample: empty input");
  return separable_resample(x, cubic_taps(x.dim(2), scale), cubic_taps(x.dim(3), scale), "bicubic_resample");
}

Tensor box_downsample(const Tensor& x, int factor) {
  require_image("box_downsample", x);
  if (factor < 1) throw ConfigError("box_downsample: factor must be positive");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % factor != 0 || w % factor != 0) throw ShapeError("box_downsample: extents not divisible by factor");
  const std::int64_t oh = h / factor, ow = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl({x.dim(0), x.dim(1), oh, ow}, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) acc += xv[(p * h + y * factor + dy) * w + xx * factor + dx];
          ov[(p * oh + y) * ow + xx] = static_cast<T>(acc * inv);
        }
    return finish(out, "box_downsample", {x.impl_ptr()}, [=](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gx = grad_of<T>(*e.inputs[0]);
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t xx = 0; xx < w; ++xx)
            gx[(p * h + y) * w + xx] += static_cast<T>(g[(p * oh + y / factor) * ow + xx / factor] * inv);
    });
  });
}

}  // namespace spinet
