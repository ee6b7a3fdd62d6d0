#include <algorithm>
#include <cmath>
#include <memory>

#include "op_support.hpp"
#include "spinet/ops.hpp"

namespace spinet {

using detail::finish;
using detail::grad_of;
using detail::new_impl;
using detail::out_grad;
using detail::values_of;
using detail::wants_grad;

namespace {

struct AttentionGeometry {
  std::int64_t n, t, d, sites;

  std::int64_t at(std::int64_t b, std::int64_t step, std::int64_t feat, std::int64_t site) const {
    return ((b * t + step) * d + feat) * sites + site;
  }
};

}  // namespace

Tensor temporal_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  for (const auto* p : {&q, &k, &v}) detail::require_defined(*p, "temporal_attention", "q/k/v");
  detail::require_same_dtype("temporal_attention", {&q, &k, &v});
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("temporal_attention: q, k, v must share a shape");
  }
  if (q.rank() < 3) throw ShapeError("temporal_attention: expected [N,T,D,...], got " + to_string(q.shape()));
  AttentionGeometry g{q.dim(0), q.dim(1), q.dim(2), 1};
  for (std::size_t ax = 3; ax < q.rank(); ++ax) g.sites *= q.dim(ax);
  if (g.t == 0) throw EmptyInputError("temporal_attention: T = 0");
  if (g.d == 0) throw ShapeError("temporal_attention: D = 0");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(g.d));

  // Sites are the innermost, contiguous axis: every loop below runs over a
  // whole row of sites at once.
  return dispatch(q.dtype(), [&]<class T>() {
    const auto& qv = values_of<T>(*q.impl_ptr());
    const auto& kv = values_of<T>(*k.impl_ptr());
    const auto& vv = values_of<T>(*v.impl_ptr());
    auto out = new_impl(q.shape(), q.dtype());
    auto& ov = values_of<T>(*out);
    const std::int64_t tt = g.t, ns = g.sites;
    // Softmax weights [N, T, T, sites], kept for the backward pass.
    auto weights = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g.n * tt * tt * ns));
    std::vector<double> mx(static_cast<std::size_t>(ns)), z(mx.size()), acc(mx.size());
    for (std::int64_t b = 0; b < g.n; ++b)
      for (std::int64_t i = 0; i < tt; ++i) {
        double* a = weights->data() + (b * tt + i) * tt * ns;
        for (std::int64_t j = 0; j < tt; ++j) {
          double* row = a + j * ns;
          std::fill(row, row + ns, 0.0);
          for (std::int64_t f = 0; f < g.d; ++f) {
            const T* qr = qv.data() + g.at(b, i, f, 0);
            const T* kr = kv.data() + g.at(b, j, f, 0);
            for (std::int64_t s = 0; s < ns; ++s) row[s] += static_cast<double>(qr[s]) * kr[s];
          }
          for (std::int64_t s = 0; s < ns; ++s) row[s] *= inv_sqrt_d;
        }
        std::copy(a, a + ns, mx.begin());
        for (std::int64_t j = 1; j < tt; ++j)
          for (std::int64_t s = 0; s < ns; ++s) mx[s] = std::max(mx[s], a[j * ns + s]);
        std::fill(z.begin(), z.end(), 0.0);
        for (std::int64_t j = 0; j < tt; ++j)
          for (std::int64_t s = 0; s < ns; ++s) z[s] += (a[j * ns + s] = std::exp(a[j * ns + s] - mx[s]));
        for (std::int64_t j = 0; j < tt; ++j)
          for (std::int64_t s = 0; s < ns; ++s) a[j * ns + s] /= z[s];
        for (std::int64_t f = 0; f < g.d; ++f) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::int64_t j = 0; j < tt; ++j) {
            const T* vr = vv.data() + g.at(b, j, f, 0);
            const double* row = a + j * ns;
            for (std::int64_t s = 0; s < ns; ++s) acc[s] += row[s] * vr[s];
          }
          T* orow = ov.data() + g.at(b, i, f, 0);
          for (std::int64_t s = 0; s < ns; ++s) orow[s] = static_cast<T>(acc[s]);
        }
      }

    return finish(out, "temporal_attention", {q.impl_ptr(), k.impl_ptr(), v.impl_ptr()},
                  [g, weights, inv_sqrt_d](const Tape::Entry& e) {
                    const auto& go = out_grad<T>(*e.output);
                    const auto& qv = values_of<T>(*e.inputs[0]);
                    const auto& kv = values_of<T>(*e.inputs[1]);
                    const auto& vv = values_of<T>(*e.inputs[2]);
                    T* gq = wants_grad(e.inputs[0]) ? grad_of<T>(*e.inputs[0]).data() : nullptr;
                    T* gk = wants_grad(e.inputs[1]) ? grad_of<T>(*e.inputs[1]).data() : nullptr;
                    T* gv = wants_grad(e.inputs[2]) ? grad_of<T>(*e.inputs[2]).data() : nullptr;
                    const std::int64_t tt = g.t, ns = g.sites;
                    std::vector<double> ds(static_cast<std::size_t>(tt * tt * ns));
                    std::vector<double> acc(static_cast<std::size_t>(ns)), row_dot(acc.size());
                    auto add_to = [&](T* dst) {
                      for (std::int64_t s = 0; s < ns; ++s) dst[s] += static_cast<T>(acc[s]);
                    };
                    for (std::int64_t b = 0; b < g.n; ++b) {
                      const double* a = weights->data() + b * tt * tt * ns;
                      if (gv) {
                        for (std::int64_t j = 0; j < tt; ++j)
                          for (std::int64_t f = 0; f < g.d; ++f) {
                            std::fill(acc.begin(), acc.end(), 0.0);
                            for (std::int64_t i = 0; i < tt; ++i) {
                              const double* w = a + (i * tt + j) * ns;
                              const T* gr = go.data() + g.at(b, i, f, 0);
                              for (std::int64_t s = 0; s < ns; ++s) acc[s] += w[s] * gr[s];
                            }
                            add_to(gv + g.at(b, j, f, 0));
                          }
                      }
                      if (!gq && !gk) continue;
                      // d(loss)/d(score) through the softmax, already scaled by 1/sqrt(D).
                      for (std::int64_t i = 0; i < tt; ++i) {
                        std::fill(row_dot.begin(), row_dot.end(), 0.0);
                        for (std::int64_t j = 0; j < tt; ++j) {
                          double* d = ds.data() + (i * tt + j) * ns;
                          std::fill(d, d + ns, 0.0);
                          for (std::int64_t f = 0; f < g.d; ++f) {
                            const T* gr = go.data() + g.at(b, i, f, 0);
                            const T* vr = vv.data() + g.at(b, j, f, 0);
                            for (std::int64_t s = 0; s < ns; ++s) d[s] += static_cast<double>(gr[s]) * vr[s];
                          }
                          const double* w = a + (i * tt + j) * ns;
                          for (std::int64_t s = 0; s < ns; ++s) row_dot[s] += w[s] * d[s];
                        }
                        for (std::int64_t j = 0; j < tt; ++j) {
                          double* d = ds.data() + (i * tt + j) * ns;
                          const double* w = a + (i * tt + j) * ns;
                          for (std::int64_t s = 0; s < ns; ++s) d[s] = w[s] * (d[s] - row_dot[s]) * inv_sqrt_d;
                        }
                      }
                      for (std::int64_t f = 0; f < g.d; ++f) {
                        if (gq) {
                          for (std::int64_t i = 0; i < tt; ++i) {
                            std::fill(acc.begin(), acc.end(), 0.0);
                            for (std::int64_t j = 0; j < tt; ++j) {
                              const double* d = ds.data() + (i * tt + j) * ns;
                              const T* kr = kv.data() + g.at(b, j, f, 0);
                              for (std::int64_t s = 0; s < ns; ++s) acc[s] += d[s] * kr[s];
                            }
                            add_to(gq + g.at(b, i, f, 0));
                          }
                        }
                        if (gk) {
                          for (std::int64_t j = 0; j < tt; ++j) {
                            std::fill(acc.begin(), acc.end(), 0.0);
                            for (std::int64_t i = 0; i < tt; ++i) {
                              const double* d = ds.data() + (i * tt + j) * ns;
                              const T* qr = qv.data() + g.at(b, i, f, 0);
                              for (std::int64_t s = 0; s < ns; ++s) acc[s] += d[s] * qr[s];
                            }
                            add_to(gk + g.at(b, j, f, 0));
                          }
                        }
                      }
                    }
                  });
  });
}

}  // namespace spinet
