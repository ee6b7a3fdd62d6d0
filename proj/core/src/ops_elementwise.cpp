#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_support.hpp"
#include "spinet/ops.hpp"

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

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Elementwise map with derivative expressed through input and output values.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  detail::require_defined(x, name, "x");
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(x.shape(), x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = static_cast<T>(fwd(xv[i]));
    return finish(out, name, {x.impl_ptr()}, [deriv](const Tape::Entry& e) {
      auto& in = *e.inputs[0];
      const auto& iv = values_of<T>(in);
      const auto& outv = values_of<T>(*e.output);
      const auto& g = out_grad<T>(*e.output);
      auto& gi = grad_of<T>(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * static_cast<T>(deriv(iv[i], outv[i]));
    });
  });
}

struct Split {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

Split split_at(const Shape& s, std::size_t axis) {
  Split r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "add", "a");
  detail::require_defined(b, "add", "b");
  require_same_shape("add", a, b);
  detail::require_same_dtype("add", {&a, &b});
  return dispatch(a.dtype(), [&]<class T>() {
    auto out = new_impl(a.shape(), a.dtype());
    const auto& av = values_of<T>(*a.impl_ptr());
    const auto& bv = values_of<T>(*b.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    return finish(out, "add", {a.impl_ptr(), b.impl_ptr()}, [](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      for (const auto& in : e.inputs) {
        if (!wants_grad(in)) continue;
        auto& gi = grad_of<T>(*in);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "sub", "a");
  detail::require_defined(b, "sub", "b");
  require_same_shape("sub", a, b);
  detail::require_same_dtype("sub", {&a, &b});
  return dispatch(a.dtype(), [&]<class T>() {
    auto out = new_impl(a.shape(), a.dtype());
    const auto& av = values_of<T>(*a.impl_ptr());
    const auto& bv = values_of<T>(*b.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    return finish(out, "sub", {a.impl_ptr(), b.impl_ptr()}, [](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      if (wants_grad(e.inputs[0])) {
        auto& ga = grad_of<T>(*e.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants_grad(e.inputs[1])) {
        auto& gb = grad_of<T>(*e.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "mul", "a");
  detail::require_defined(b, "mul", "b");
  require_same_shape("mul", a, b);
  detail::require_same_dtype("mul", {&a, &b});
  return dispatch(a.dtype(), [&]<class T>() {
    auto out = new_impl(a.shape(), a.dtype());
    const auto& av = values_of<T>(*a.impl_ptr());
    const auto& bv = values_of<T>(*b.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    return finish(out, "mul", {a.impl_ptr(), b.impl_ptr()}, [](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      const auto& av = values_of<T>(*e.inputs[0]);
      const auto& bv = values_of<T>(*e.inputs[1]);
      if (wants_grad(e.inputs[0])) {
        auto& ga = grad_of<T>(*e.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (wants_grad(e.inputs[1])) {
        auto& gb = grad_of<T>(*e.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](auto v) { return v * factor; }, [factor](auto, auto) { return factor; });
}

Tensor scale_blocks(const Tensor& x, const Tensor& gate) {
  detail::require_defined(x, "scale_blocks", "x");
  detail::require_defined(gate, "scale_blocks", "gate");
  detail::require_same_dtype("scale_blocks", {&x, &gate});
  const auto& xs = x.shape();
  const auto& gs = gate.shape();
  if (gs.size() > xs.size() || !std::equal(gs.begin(), gs.end(), xs.begin())) {
    throw ShapeError("scale_blocks: gate shape " + to_string(gs) + " is not a prefix of " + to_string(xs));
  }
  const auto blocks = static_cast<std::size_t>(gate.numel());
  const auto block = static_cast<std::size_t>(x.numel()) / std::max<std::size_t>(blocks, 1);
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(xs, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    const auto& gv = values_of<T>(*gate.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < block; ++i) ov[b * block + i] = xv[b * block + i] * gv[b];
    return finish(out, "scale_blocks", {x.impl_ptr(), gate.impl_ptr()}, [blocks, block](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      const auto& xv = values_of<T>(*e.inputs[0]);
      const auto& gv = values_of<T>(*e.inputs[1]);
      if (wants_grad(e.inputs[0])) {
        auto& gx = grad_of<T>(*e.inputs[0]);
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t i = 0; i < block; ++i) gx[b * block + i] += g[b * block + i] * gv[b];
      }
      if (wants_grad(e.inputs[1])) {
        auto& gg = grad_of<T>(*e.inputs[1]);
        for (std::size_t b = 0; b < blocks; ++b) {
          double acc = 0.0;
          for (std::size_t i = 0; i < block; ++i) acc += static_cast<double>(g[b * block + i]) * xv[b * block + i];
          gg[b] += static_cast<T>(acc);
        }
      }
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  detail::require_defined(x, "reshape", "x");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = std::move(shape);
  out->dtype = x.dtype();
  out->data = x.impl_ptr()->data;
  return dispatch(x.dtype(), [&]<class T>() {
    return finish(out, "reshape", {x.impl_ptr()}, [](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gi = grad_of<T>(*e.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw EmptyInputError("concat: no tensors");
  const Tensor& first = detail::require_defined(parts[0], "concat", "parts[0]");
  if (axis >= first.rank()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    detail::require_defined(p, "concat", "part");
    if (p.dtype() != first.dtype()) throw UsageError("concat: mixed dtypes");
    if (p.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.shape()[d] != first.shape()[d]) {
        throw ShapeError("concat: extent mismatch " + to_string(p.shape()) + " vs " + to_string(first.shape()));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const Split whole = split_at(out_shape, axis);
  std::vector<ImplPtr> inputs;
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    inputs.push_back(p.impl_ptr());
    offsets.push_back(offset);
    offset += p.shape()[axis];
  }
  return dispatch(first.dtype(), [&]<class T>() {
    auto out = new_impl(out_shape, first.dtype());
    auto& ov = values_of<T>(*out);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto& pv = values_of<T>(*inputs[k]);
      const std::int64_t ext = inputs[k]->shape[axis];
      for (std::int64_t o = 0; o < whole.outer; ++o) {
        std::copy_n(pv.begin() + o * ext * whole.inner, ext * whole.inner,
                    ov.begin() + (o * whole.extent + offsets[k]) * whole.inner);
      }
    }
    return finish(out, "concat", inputs, [whole, offsets, axis](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      for (std::size_t k = 0; k < e.inputs.size(); ++k) {
        if (!wants_grad(e.inputs[k])) continue;
        auto& gi = grad_of<T>(*e.inputs[k]);
        const std::int64_t ext = e.inputs[k]->shape[axis];
        for (std::int64_t o = 0; o < whole.outer; ++o) {
          const auto src = (o * whole.extent + offsets[k]) * whole.inner;
          const auto dst = o * ext * whole.inner;
          for (std::int64_t i = 0; i < ext * whole.inner; ++i) gi[dst + i] += g[src + i];
        }
      }
    });
  });
}

Tensor take(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
  detail::require_defined(x, "take", "x");
  if (axis >= x.rank()) throw ShapeError("take: axis out of range");
  const Split s = split_at(x.shape(), axis);
  for (auto idx : indices) {
    if (static_cast<std::int64_t>(idx) >= s.extent) throw ShapeError("take: index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = static_cast<std::int64_t>(indices.size());
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(out_shape, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    const auto n = static_cast<std::int64_t>(idx.size());
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < n; ++j)
        std::copy_n(xv.begin() + (o * s.extent + static_cast<std::int64_t>(idx[j])) * s.inner, s.inner,
                    ov.begin() + (o * n + j) * s.inner);
    return finish(out, "take", {x.impl_ptr()}, [s, idx](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gi = grad_of<T>(*e.inputs[0]);
      const auto n = static_cast<std::int64_t>(idx.size());
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t j = 0; j < n; ++j)
          for (std::int64_t i = 0; i < s.inner; ++i)
            gi[(o * s.extent + static_cast<std::int64_t>(idx[j])) * s.inner + i] += g[(o * n + j) * s.inner + i];
    });
  });
}

Tensor sum(const Tensor& x) {
  detail::require_defined(x, "sum", "x");
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl({}, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    double acc = 0.0;
    for (auto v : xv) acc += v;
    values_of<T>(*out)[0] = static_cast<T>(acc);
    return finish(out, "sum", {x.impl_ptr()}, [](const Tape::Entry& e) {
      const T g = out_grad<T>(*e.output)[0];
      auto& gi = grad_of<T>(*e.inputs[0]);
      for (auto& v : gi) v += g;
    });
  });
}

Tensor mean(const Tensor& x, std::vector<std::size_t> axes) {
  detail::require_defined(x, "mean", "x");
  const auto& xs = x.shape();
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(xs.size(), false);
  std::int64_t count = 1;
  for (auto a : axes) {
    if (a >= xs.size()) throw ShapeError("mean: axis out of range for " + to_string(xs));
    reduced[a] = true;
    count *= xs[a];
  }
  if (count == 0) throw EmptyInputError("mean: reduction over an empty axis of " + to_string(xs));
  Shape out_shape;
  for (std::size_t d = 0; d < xs.size(); ++d)
    if (!reduced[d]) out_shape.push_back(xs[d]);

  // For each input element, the flat index of the output it feeds.
  const auto n = static_cast<std::size_t>(x.numel());
  std::vector<std::int64_t> out_stride(xs.size(), 0);
  {
    std::int64_t stride = 1;
    for (std::size_t d = xs.size(); d-- > 0;) {
      if (!reduced[d]) {
        out_stride[d] = stride;
        stride *= xs[d];
      }
    }
  }
  auto target = std::make_shared<std::vector<std::int64_t>>(n);
  {
    std::vector<std::int64_t> index(xs.size(), 0);
    std::int64_t flat_out = 0;
    for (std::size_t i = 0; i < n; ++i) {
      (*target)[i] = flat_out;
      for (std::size_t d = xs.size(); d-- > 0;) {
        ++index[d];
        flat_out += out_stride[d];
        if (index[d] < xs[d]) break;
        flat_out -= out_stride[d] * index[d];
        index[d] = 0;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(out_shape, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    // Extended precision keeps the mean of repeated values exact.
    std::vector<long double> acc(static_cast<std::size_t>(shape_numel(out_shape)), 0.0L);
    for (std::size_t i = 0; i < n; ++i) acc[static_cast<std::size_t>((*target)[i])] += xv[i];
    auto& ov = values_of<T>(*out);
    for (std::size_t j = 0; j < acc.size(); ++j) ov[j] = static_cast<T>(acc[j] / static_cast<long double>(count));
    return finish(out, "mean", {x.impl_ptr()}, [target, inv](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gi = grad_of<T>(*e.inputs[0]);
      for (std::size_t i = 0; i < gi.size(); ++i)
        gi[i] += static_cast<T>(g[static_cast<std::size_t>((*target)[i])] * inv);
    });
  });
}

Tensor global_avg_pool(const Tensor& x) {
  detail::require_defined(x, "global_avg_pool", "x");
  if (x.rank() < 2) throw ShapeError("global_avg_pool: rank must be >= 2");
  const std::int64_t hw = x.shape()[x.rank() - 1] * x.shape()[x.rank() - 2];
  if (hw == 0) throw EmptyInputError("global_avg_pool: empty spatial extent");
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  const std::int64_t blocks = shape_numel(out_shape);
  const double inv = 1.0 / static_cast<double>(hw);
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(out_shape, x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::int64_t b = 0; b < blocks; ++b) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) acc += xv[b * hw + i];
      ov[b] = static_cast<T>(acc * inv);
    }
    return finish(out, "global_avg_pool", {x.impl_ptr()}, [blocks, hw, inv](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      auto& gi = grad_of<T>(*e.inputs[0]);
      for (std::int64_t b = 0; b < blocks; ++b) {
        const T gb = static_cast<T>(g[b] * inv);
        for (std::int64_t i = 0; i < hw; ++i) gi[b * hw + i] += gb;
      }
    });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "matmul", "a");
  detail::require_defined(b, "matmul", "b");
  detail::require_rank("matmul", a, 2, "a");
  detail::require_rank("matmul", b, 2, "b");
  detail::require_same_dtype("matmul", {&a, &b});
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  return dispatch(a.dtype(), [&]<class T>() {
    auto out = new_impl({m, n}, a.dtype());
    MapMat<T>(values_of<T>(*out).data(), m, n).noalias() =
        ConstMapMat<T>(values_of<T>(*a.impl_ptr()).data(), m, k) *
        ConstMapMat<T>(values_of<T>(*b.impl_ptr()).data(), k, n);
    return finish(out, "matmul", {a.impl_ptr(), b.impl_ptr()}, [m, k, n](const Tape::Entry& e) {
      ConstMapMat<T> g(out_grad<T>(*e.output).data(), m, n);
      if (wants_grad(e.inputs[0])) {
        MapMat<T>(grad_of<T>(*e.inputs[0]).data(), m, k).noalias() +=
            g * ConstMapMat<T>(values_of<T>(*e.inputs[1]).data(), k, n).transpose();
      }
      if (wants_grad(e.inputs[1])) {
        MapMat<T>(grad_of<T>(*e.inputs[1]).data(), k, n).noalias() +=
            ConstMapMat<T>(values_of<T>(*e.inputs[0]).data(), m, k).transpose() * g;
      }
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_defined(x, "linear", "x");
  detail::require_defined(weight, "linear", "weight");
  detail::require_rank("linear", x, 2, "x");
  detail::require_rank("linear", weight, 2, "weight");
  detail::require_same_dtype("linear", {&x, &weight, &bias});
  const auto m = x.dim(0), k = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != k) {
    throw ShapeError("linear: weight " + to_string(weight.shape()) + " does not accept input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{o}) throw ShapeError("linear: bias must have shape [" + std::to_string(o) + "]");
  const bool has_bias = bias.defined();
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl({m, o}, x.dtype());
    // Plain loops: every row goes through the same code path, so a row's
    // result does not depend on its position in the batch.
    const auto& xv = values_of<T>(*x.impl_ptr());
    const auto& wv = values_of<T>(*weight.impl_ptr());
    auto& yv = values_of<T>(*out);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < o; ++j) {
        double acc = has_bias ? static_cast<double>(values_of<T>(*bias.impl_ptr())[j]) : 0.0;
        for (std::int64_t c = 0; c < k; ++c) acc += static_cast<double>(xv[i * k + c]) * wv[j * k + c];
        yv[i * o + j] = static_cast<T>(acc);
      }
    std::vector<ImplPtr> inputs{x.impl_ptr(), weight.impl_ptr()};
    if (has_bias) inputs.push_back(bias.impl_ptr());
    return finish(out, "linear", inputs, [m, k, o](const Tape::Entry& e) {
      ConstMapMat<T> g(out_grad<T>(*e.output).data(), m, o);
      if (wants_grad(e.inputs[0])) {
        MapMat<T>(grad_of<T>(*e.inputs[0]).data(), m, k).noalias() +=
            g * ConstMapMat<T>(values_of<T>(*e.inputs[1]).data(), o, k);
      }
      if (wants_grad(e.inputs[1])) {
        MapMat<T>(grad_of<T>(*e.inputs[1]).data(), o, k).noalias() +=
            g.transpose() * ConstMapMat<T>(values_of<T>(*e.inputs[0]).data(), m, k);
      }
      if (e.inputs.size() > 2 && wants_grad(e.inputs[2])) {
        auto& gb = grad_of<T>(*e.inputs[2]);
        for (std::int64_t j = 0; j < o; ++j) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < m; ++i) acc += g(i, j);
          gb[j] += static_cast<T>(acc);
        }
      }
    });
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](auto v) {
        // Branches keep exp() from overflowing for large |v|.
        using V = decltype(v);
        if (v >= V(0)) return V(1) / (V(1) + std::exp(-v));
        const V ev = std::exp(v);
        return ev / (V(1) + ev);
      },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

namespace {
thread_local ActivationPatternScope* g_pattern_scope = nullptr;
}  // namespace

ActivationPatternScope::ActivationPatternScope() : previous_(g_pattern_scope) { g_pattern_scope = this; }
ActivationPatternScope::~ActivationPatternScope() { g_pattern_scope = previous_; }
ActivationPatternScope* ActivationPatternScope::current() { return g_pattern_scope; }

void ActivationPatternScope::absorb(const Tensor& pre_activation) {
  for (double v : pre_activation.values()) hash_ = (hash_ ^ (v >= 0.0 ? 1u : 0u)) * 0x100000001b3ULL;
}

Tensor relu(const Tensor& x) {
  if (auto* scope = ActivationPatternScope::current()) scope->absorb(x);
  return unary(
      x, "relu", [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); },
      [](auto v, auto) { return v > decltype(v)(0) ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu: slope must lie in (0,1)");
  if (auto* scope = ActivationPatternScope::current()) scope->absorb(x);
  return unary(
      x, "leaky_relu",
      [slope](auto v) {
        using V = decltype(v);
        return v >= V(0) ? v : static_cast<V>(slope * v);
      },
      [slope](auto v, auto) { return v >= decltype(v)(0) ? 1.0 : slope; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::require_defined(x, "softmax", "x");
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  const Split s = split_at(x.shape(), axis);
  if (s.extent == 0) throw EmptyInputError("softmax: empty axis");
  return dispatch(x.dtype(), [&]<class T>() {
    auto out = new_impl(x.shape(), x.dtype());
    const auto& xv = values_of<T>(*x.impl_ptr());
    auto& ov = values_of<T>(*out);
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const auto at = [&](std::int64_t j) { return (o * s.extent + j) * s.inner + i; };
        T mx = xv[at(0)];
        for (std::int64_t j = 1; j < s.extent; ++j) mx = std::max(mx, xv[at(j)]);
        double z = 0.0;
        for (std::int64_t j = 0; j < s.extent; ++j) z += std::exp(static_cast<double>(xv[at(j)] - mx));
        for (std::int64_t j = 0; j < s.extent; ++j)
          ov[at(j)] = static_cast<T>(std::exp(static_cast<double>(xv[at(j)] - mx)) / z);
      }
    }
    return finish(out, "softmax", {x.impl_ptr()}, [s](const Tape::Entry& e) {
      const auto& g = out_grad<T>(*e.output);
      const auto& y = values_of<T>(*e.output);
      auto& gi = grad_of<T>(*e.inputs[0]);
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const auto at = [&](std::int64_t j) { return (o * s.extent + j) * s.inner + i; };
          double dot = 0.0;
          for (std::int64_t j = 0; j < s.extent; ++j) dot += static_cast<double>(g[at(j)]) * y[at(j)];
          for (std::int64_t j = 0; j < s.extent; ++j)
            gi[at(j)] += static_cast<T>(y[at(j)] * (g[at(j)] - dot));
        }
      }
    });
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  detail::require_defined(logits, "bce_with_logits", "logits");
  detail::require_defined(targets, "bce_with_logits", "targets");
  require_same_shape("bce_with_logits", logits, targets);
  detail::require_same_dtype("bce_with_logits", {&logits, &targets});
  if (logits.numel() == 0) throw EmptyInputError("bce_with_logits: empty input");
  return dispatch(logits.dtype(), [&]<class T>() {
    const auto& z = values_of<T>(*logits.impl_ptr());
    const auto& t = values_of<T>(*targets.impl_ptr());
    for (auto v : t) {
      if (v != T(0) && v != T(1)) throw ValidationError("bce_with_logits: targets must be 0 or 1");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double zi = z[i];
      acc += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    const double inv = 1.0 / static_cast<double>(z.size());
    auto out = new_impl({}, logits.dtype());
    values_of<T>(*out)[0] = static_cast<T>(acc * inv);
    return finish(out, "bce_with_logits", {logits.impl_ptr(), targets.impl_ptr()}, [inv](const Tape::Entry& e) {
      if (!wants_grad(e.inputs[0])) return;
      const double g = out_grad<T>(*e.output)[0] * inv;
      const auto& z = values_of<T>(*e.inputs[0]);
      const auto& t = values_of<T>(*e.inputs[1]);
      auto& gz = grad_of<T>(*e.inputs[0]);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        const double sig = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
        gz[i] += static_cast<T>(g * (sig - t[i]));
      }
    });
  });
}

}  // namespace spinet
