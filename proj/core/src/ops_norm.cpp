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
using detail::wants_grad;

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps) {
  detail::require_defined(x, "batch_norm", "x");
  detail::require_defined(gamma, "batch_norm", "gamma");
  detail::require_defined(beta, "batch_norm", "beta");
  detail::require_same_dtype("batch_norm", {&x, &gamma, &beta});
  if (x.rank() != 4 && x.rank() != 5) throw ShapeError("batch_norm: expected [N,C,H,W] or [N,T,C,H,W], got " + to_string(x.shape()));
  if (!(eps >= 0.0)) throw ConfigError("batch_norm: eps must be non-negative");
  const std::size_t channel_axis = x.rank() == 4 ? 1 : 2;
  const auto& xs = x.shape();
  const std::int64_t channels = xs[channel_axis];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("batch_norm: gamma/beta must have shape [" + std::to_string(channels) + "]");
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < channel_axis; ++d) outer *= xs[d];
  for (std::size_t d = channel_axis + 1; d < xs.size(); ++d) inner *= xs[d];
  const std::int64_t count = outer * inner;
  if (count == 0) throw EmptyInputError("batch_norm: no elements per channel");

  if (mode == Mode::eval && !state.initialized) {
    throw StateError("batch_norm: eval mode requires running statistics from at least one train step");
  }

  return dispatch(x.dtype(), [&]<class T>() {
    const auto& xv = values_of<T>(*x.impl_ptr());
    const auto& gv = values_of<T>(*gamma.impl_ptr());
    const auto& bv = values_of<T>(*beta.impl_ptr());
    auto at = [&](std::int64_t o, std::int64_t c, std::int64_t i) { return (o * channels + c) * inner + i; };

    std::vector<double> mean_c(static_cast<std::size_t>(channels)), inv_std(static_cast<std::size_t>(channels));
    if (mode == Mode::train) {
      if (!state.initialized || state.running_mean.dtype() != x.dtype() ||
          state.running_mean.numel() != channels) {
        state.running_mean = Tensor::zeros({channels}, x.dtype());
        state.running_var = Tensor::full({channels}, 1.0, x.dtype());
        state.initialized = true;
      }
      auto rm = state.running_mean.mutable_data<T>();
      auto rv = state.running_var.mutable_data<T>();
      for (std::int64_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) s += xv[at(o, c, i)];
        const double m = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) {
            const double d = xv[at(o, c, i)] - m;
            ss += d * d;
          }
        const double var = ss / static_cast<double>(count);
        mean_c[c] = m;
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
        rm[c] = static_cast<T>((1.0 - state.momentum) * rm[c] + state.momentum * m);
        rv[c] = static_cast<T>((1.0 - state.momentum) * rv[c] + state.momentum * unbiased);
      }
    } else {
      if (state.running_mean.numel() != channels || state.running_mean.dtype() != x.dtype()) {
        throw StateError("batch_norm: running statistics do not match the input channels/dtype");
      }
      const auto rm = state.running_mean.data<T>();
      const auto rv = state.running_var.data<T>();
      for (std::int64_t c = 0; c < channels; ++c) {
        mean_c[c] = rm[c];
        inv_std[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) + eps);
      }
    }
    if (std::any_of(inv_std.begin(), inv_std.end(), [](double v) { return !std::isfinite(v); })) {
      throw NumericError("batch_norm: zero variance with eps = 0");
    }

    auto out = new_impl(xs, x.dtype());
    auto& ov = values_of<T>(*out);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const auto idx = at(o, c, i);
          // gamma * xhat + beta, with xhat formed explicitly so a constant
          // input maps to beta exactly.
          const double xhat = (xv[idx] - mean_c[c]) * inv_std[c];
          ov[idx] = static_cast<T>(gv[c] * xhat + bv[c]);
        }
      }

    const bool train = mode == Mode::train;
    return finish(out, "batch_norm", {x.impl_ptr(), gamma.impl_ptr(), beta.impl_ptr()},
                  [=](const Tape::Entry& e) {
                    const auto& g = out_grad<T>(*e.output);
                    const auto& xv = values_of<T>(*e.inputs[0]);
                    const auto& gv = values_of<T>(*e.inputs[1]);
                    auto at = [&](std::int64_t o, std::int64_t c, std::int64_t i) {
                      return (o * channels + c) * inner + i;
                    };
                    const bool need_x = wants_grad(e.inputs[0]);
                    T* gx = need_x ? grad_of<T>(*e.inputs[0]).data() : nullptr;
                    T* gg = wants_grad(e.inputs[1]) ? grad_of<T>(*e.inputs[1]).data() : nullptr;
                    T* gb = wants_grad(e.inputs[2]) ? grad_of<T>(*e.inputs[2]).data() : nullptr;
                    for (std::int64_t c = 0; c < channels; ++c) {
                      double sum_g = 0.0, sum_gx = 0.0;
                      for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t i = 0; i < inner; ++i) {
                          const auto idx = at(o, c, i);
                          const double xhat = (xv[idx] - mean_c[c]) * inv_std[c];
                          sum_g += g[idx];
                          sum_gx += g[idx] * xhat;
                        }
                      if (gg) gg[c] += static_cast<T>(sum_gx);
                      if (gb) gb[c] += static_cast<T>(sum_g);
                      if (!need_x) continue;
                      const double scale = gv[c] * inv_std[c];
                      const double inv_n = 1.0 / static_cast<double>(count);
                      for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t i = 0; i < inner; ++i) {
                          const auto idx = at(o, c, i);
                          if (train) {
                            const double xhat = (xv[idx] - mean_c[c]) * inv_std[c];
                            gx[idx] += static_cast<T>(scale * (g[idx] - inv_n * sum_g - xhat * inv_n * sum_gx));
                          } else {
                            gx[idx] += static_cast<T>(scale * g[idx]);
                          }
                        }
                    }
                  });
  });
}

}  // namespace spinet
